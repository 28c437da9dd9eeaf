//! Command-line front end: validate scenarios, list accepting runs, export
//! plans, run closed-loop simulations, and compare against the unstaggered
//! no-guard baseline.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use ltlcbf::controller::{ControlContext, Schedule};
use ltlcbf::scenario::{default_t_end, load_scenario, plan_artifact, synthesize, Scenario, Synthesis};
use ltlcbf::sim::{simulate, write_outputs, FailureKind, SimResult};

#[derive(Parser)]
#[command(name = "ltlcbf", version, about = "Temporal-logic controller synthesis with control barrier functions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonOpts {
    /// Scenario configuration file (JSON).
    #[arg(short = 'c', long = "config")]
    config: PathBuf,
    /// Override the accepting-run selection (index into `find-run` order).
    #[arg(long = "run-index")]
    run_index: Option<usize>,
    /// Zero all guard functions.
    #[arg(long = "no-guards", default_value_t = false)]
    no_guards: bool,
    /// Seed for fuzzing workflows; the pipeline itself is deterministic.
    #[arg(long, hide = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and cross-validate a scenario (expressions, automaton, guards).
    Validate {
        #[command(flatten)]
        common: CommonOpts,
    },
    /// List accepting runs of the scenario's automaton.
    FindRun {
        #[command(flatten)]
        common: CommonOpts,
        /// Maximum number of runs to list.
        #[arg(long, default_value_t = 10)]
        limit: usize,
    },
    /// Export the task plan (run, formulae, windows, guards, barriers).
    Plan {
        #[command(flatten)]
        common: CommonOpts,
        /// Output path (stdout when omitted).
        #[arg(short = 'o', long = "out")]
        out: Option<PathBuf>,
    },
    /// Simulate the closed loop and write trajectory + verdict.
    Simulate {
        #[command(flatten)]
        common: CommonOpts,
        /// Trajectory CSV path.
        #[arg(short = 'o', long = "out", default_value = "trajectory.csv")]
        out: PathBuf,
        /// Verdict JSON path.
        #[arg(long = "report", default_value = "verdict.json")]
        report: PathBuf,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long = "t-end")]
        t_end: Option<f64>,
    },
    /// Run the guarded controller and the no-guard simultaneous baseline,
    /// and report both outcomes.
    Compare {
        #[command(flatten)]
        common: CommonOpts,
        /// Report JSON path.
        #[arg(long = "report", default_value = "compare.json")]
        report: PathBuf,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long = "t-end")]
        t_end: Option<f64>,
    },
}

#[derive(Serialize)]
struct ErrorJson<'a> {
    error: &'a str,
    message: String,
}

fn fail(kind: &str, message: String, code: u8) -> ExitCode {
    let payload = ErrorJson { error: kind, message };
    eprintln!("{}", serde_json::to_string(&payload).unwrap());
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => e,
    }
}

fn load(common: &CommonOpts) -> Result<(Scenario, Synthesis), ExitCode> {
    let scenario = load_scenario(&common.config)
        .map_err(|e| fail("config", e.to_string(), 2))?;
    let synthesis = synthesize(&scenario, common.run_index, common.no_guards)
        .map_err(|e| fail("config", e.to_string(), 2))?;
    Ok((scenario, synthesis))
}

fn run(cli: Cli) -> Result<ExitCode, ExitCode> {
    match cli.command {
        Command::Validate { common } => {
            let (scenario, synthesis) = load(&common)?;
            #[derive(Serialize)]
            struct ValidateJson {
                ok: bool,
                name: String,
                states: usize,
                propositions: usize,
                specs: usize,
                run: String,
                guard_warnings: Vec<String>,
            }
            let payload = ValidateJson {
                ok: true,
                name: scenario.name.clone(),
                states: scenario.dra.states.len(),
                propositions: scenario.props.len(),
                specs: synthesis.plan.specs.len(),
                run: synthesis.run_description.clone(),
                guard_warnings: synthesis
                    .guards
                    .warnings
                    .iter()
                    .map(|(lit, vs)| format!("{lit}: {}", vs.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")))
                    .collect(),
            };
            println!("{}", serde_json::to_string_pretty(&payload).unwrap());
            Ok(ExitCode::SUCCESS)
        }
        Command::FindRun { common, limit } => {
            let scenario = load_scenario(&common.config)
                .map_err(|e| fail("config", e.to_string(), 2))?;
            let runs = scenario
                .dra
                .find_accepting_runs(limit)
                .map_err(|e| fail("config", e.to_string(), 2))?;
            for (i, run) in runs.iter().enumerate() {
                println!("{i}: {}", run.format(&scenario.dra));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Plan { common, out } => {
            let (scenario, synthesis) = load(&common)?;
            let artifact = plan_artifact(&scenario, &synthesis);
            let json = serde_json::to_string_pretty(&artifact).unwrap();
            match out {
                Some(path) => std::fs::write(&path, json + "\n")
                    .map_err(|e| fail("io", e.to_string(), 4))?,
                None => println!("{json}"),
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Simulate { common, out, report, dt, t_end } => {
            let (scenario, synthesis) = load(&common)?;
            let result = run_sim(&scenario, &synthesis, Schedule::Windows, dt, t_end);
            let ctx = make_ctx(&scenario, &synthesis, Schedule::Windows);
            write_outputs(&result, &ctx, &scenario.dra, &out, &report)
                .map_err(|e| fail("io", e.to_string(), 4))?;
            match &result.verdict.failure {
                None => Ok(ExitCode::SUCCESS),
                Some(f) if f.kind == FailureKind::Internal => {
                    Err(fail("internal", f.detail.clone(), 4))
                }
                Some(f) => {
                    let kind = match f.kind {
                        FailureKind::SpecViolation => "spec_violation",
                        FailureKind::Infeasible => "infeasible",
                        FailureKind::Internal => unreachable!(),
                    };
                    Err(fail(kind, format!("at t={}: {}", f.time, f.detail), 3))
                }
            }
        }
        Command::Compare { common, report, dt, t_end } => {
            let (scenario, synthesis) = load(&common)?;
            let guarded = run_sim(&scenario, &synthesis, Schedule::Windows, dt, t_end);
            let baseline_syn = synthesize(&scenario, common.run_index, true)
                .map_err(|e| fail("config", e.to_string(), 2))?;
            let baseline = run_sim(&scenario, &baseline_syn, Schedule::Simultaneous, dt, t_end);
            #[derive(Serialize)]
            struct CompareJson {
                guarded: ltlcbf::sim::Verdict,
                no_guards: ltlcbf::sim::Verdict,
                /// Time of the baseline's first infeasible QP, if any.
                infeasible_at: Option<f64>,
            }
            let infeasible_at = baseline
                .verdict
                .failure
                .as_ref()
                .filter(|f| f.kind == FailureKind::Infeasible)
                .map(|f| f.time);
            let payload = CompareJson {
                guarded: guarded.verdict,
                no_guards: baseline.verdict,
                infeasible_at,
            };
            let json = serde_json::to_string_pretty(&payload).unwrap();
            std::fs::write(&report, json.clone() + "\n")
                .map_err(|e| fail("io", e.to_string(), 4))?;
            println!("{json}");
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn make_ctx<'a>(
    scenario: &'a Scenario,
    synthesis: &'a Synthesis,
    schedule: Schedule,
) -> ControlContext<'a> {
    ControlContext {
        plan: &synthesis.plan,
        barriers: &synthesis.barriers,
        model: &scenario.model,
        props: &scenario.props,
        params: &scenario.params,
        schedule,
    }
}

fn run_sim(
    scenario: &Scenario,
    synthesis: &Synthesis,
    schedule: Schedule,
    dt: Option<f64>,
    t_end: Option<f64>,
) -> SimResult {
    let ctx = make_ctx(scenario, synthesis, schedule);
    let dt = dt.unwrap_or(scenario.sim.dt);
    let t_end = t_end.unwrap_or_else(|| default_t_end(scenario, &synthesis.plan));
    simulate(&ctx, &scenario.dra, dt, t_end)
}
