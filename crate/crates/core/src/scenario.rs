//! Scenario files: JSON ingestion, cross-validation, and assembly of the
//! full synthesis pipeline (run selection, windows, guards, barriers).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::automaton::{AutomatonError, Dra};
use crate::barrier::{GuardParams, GuardViolation};
use crate::controller::{
    build_spec_barriers, resolve_guards, CtrlError, CtrlParams, GuardAssignment, SpecBarriers,
    SystemModel,
};
use crate::expr::{parse_expr, ExprError};
use crate::formula::PropositionDef;
use crate::planner::{assign_windows, build_specs, uniform_deadlines, PlanError, TaskPlan};

#[derive(Debug, Deserialize)]
struct ScenarioFile {
    #[serde(default)]
    name: String,
    model: ModelJson,
    props: Vec<PropJson>,
    dra: DraJson,
    #[serde(default)]
    plan: PlanJson,
    #[serde(default)]
    controller: ControllerJson,
    #[serde(default)]
    guards: BTreeMap<String, Option<GuardParams>>,
    #[serde(default)]
    sim: SimJson,
}

#[derive(Debug, Deserialize)]
struct ModelJson {
    n: usize,
    m: usize,
    f: Vec<String>,
    g: Vec<Vec<String>>,
    x0: Vec<f64>,
}

#[derive(Debug, Deserialize)]
struct PropJson {
    name: String,
    z: String,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum DraJson {
    Inline { text: String },
    File { path: String },
}

#[derive(Debug, Deserialize, Default)]
struct PlanJson {
    #[serde(default)]
    deadlines: Option<Vec<f64>>,
    #[serde(default)]
    delta: Option<f64>,
    #[serde(default)]
    horizon: Option<f64>,
    #[serde(default)]
    run_index: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(default)]
struct ControllerJson {
    kappa: f64,
    rho: f64,
    gamma_min: f64,
    margin: f64,
    lambda: f64,
    mu: f64,
    lookahead: usize,
    #[serde(rename = "P")]
    cost: Option<Vec<f64>>,
    input_box: Option<BoxJson>,
}

impl Default for ControllerJson {
    fn default() -> Self {
        let d = CtrlParams::default();
        ControllerJson {
            kappa: d.kappa,
            rho: d.rho,
            gamma_min: d.gamma_min,
            margin: d.margin,
            lambda: d.lambda,
            mu: d.mu,
            lookahead: d.lookahead,
            cost: None,
            input_box: None,
        }
    }
}

#[derive(Debug, Deserialize)]
struct BoxJson {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(default)]
struct SimJson {
    dt: f64,
    t_end: Option<f64>,
    suffix_cycles: usize,
}

impl Default for SimJson {
    fn default() -> Self {
        SimJson { dt: 1e-3, t_end: None, suffix_cycles: 2 }
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub dt: f64,
    pub t_end: Option<f64>,
    pub suffix_cycles: usize,
}

#[derive(Debug, Clone)]
pub struct PlanConfig {
    pub deadlines: Option<Vec<f64>>,
    pub delta: Option<f64>,
    pub horizon: Option<f64>,
    pub run_index: Option<usize>,
}

/// A fully cross-validated scenario, ready for synthesis.
pub struct Scenario {
    pub name: String,
    pub model: SystemModel,
    pub props: Vec<PropositionDef>,
    pub dra: Dra,
    pub plan_cfg: PlanConfig,
    pub params: CtrlParams,
    pub guard_overrides: BTreeMap<String, Option<GuardParams>>,
    pub sim: SimConfig,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid JSON in {path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("model.{field}: expected {expected} entries, got {got}")]
    Dimension { field: &'static str, expected: usize, got: usize },
    #[error("proposition '{name}' is defined twice")]
    DuplicateProp { name: String },
    #[error("proposition '{name}': state functions must not depend on t")]
    TimeDependentProp { name: String },
    #[error("in expression '{context}': {source}")]
    Expr { context: String, source: ExprError },
    #[error(transparent)]
    Automaton(#[from] AutomatonError),
    #[error("plan.deadlines: {source}")]
    Plan { source: PlanError },
    #[error("run index {index} out of range ({count} accepting runs)")]
    RunIndex { index: usize, count: usize },
    #[error("controller.P must be m*m row-major ({expected} entries, got {got})")]
    CostShape { expected: usize, got: usize },
    #[error(transparent)]
    Ctrl(#[from] CtrlError),
}

pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| ScenarioError::Io { path: path.to_path_buf(), source })?;
    let file: ScenarioFile = serde_json::from_str(&text)
        .map_err(|source| ScenarioError::Json { path: path.to_path_buf(), source })?;

    let n = file.model.n;
    let m = file.model.m;
    if file.model.f.len() != n {
        return Err(ScenarioError::Dimension { field: "f", expected: n, got: file.model.f.len() });
    }
    if file.model.g.len() != n {
        return Err(ScenarioError::Dimension { field: "g", expected: n, got: file.model.g.len() });
    }
    for row in &file.model.g {
        if row.len() != m {
            return Err(ScenarioError::Dimension { field: "g row", expected: m, got: row.len() });
        }
    }
    if file.model.x0.len() != n {
        return Err(ScenarioError::Dimension { field: "x0", expected: n, got: file.model.x0.len() });
    }

    let parse = |src: &str, what: String| {
        parse_expr(src, n).map_err(|source| ScenarioError::Expr { context: what, source })
    };
    let drift = file
        .model
        .f
        .iter()
        .enumerate()
        .map(|(i, s)| parse(s, format!("model.f[{i}]")))
        .collect::<Result<Vec<_>, _>>()?;
    let input_matrix = file
        .model
        .g
        .iter()
        .enumerate()
        .map(|(i, row)| {
            row.iter()
                .enumerate()
                .map(|(j, s)| parse(s, format!("model.g[{i}][{j}]")))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut props = Vec::new();
    for p in &file.props {
        if props.iter().any(|q: &PropositionDef| q.name == p.name) {
            return Err(ScenarioError::DuplicateProp { name: p.name.clone() });
        }
        let zfun = parse(&p.z, format!("props.{}", p.name))?;
        if zfun.depends_on_time() {
            return Err(ScenarioError::TimeDependentProp { name: p.name.clone() });
        }
        props.push(PropositionDef { name: p.name.clone(), zfun });
    }

    let dra_text = match &file.dra {
        DraJson::Inline { text } => text.clone(),
        DraJson::File { path: rel } => {
            let full = path.parent().unwrap_or(Path::new(".")).join(rel);
            std::fs::read_to_string(&full)
                .map_err(|source| ScenarioError::Io { path: full, source })?
        }
    };
    let dra = crate::automaton::parse_dra(&dra_text, &props)?;

    let input_box = match file.controller.input_box {
        None => None,
        Some(b) => {
            if b.lower.len() != m || b.upper.len() != m {
                return Err(ScenarioError::Dimension {
                    field: "input_box",
                    expected: m,
                    got: b.lower.len().min(b.upper.len()),
                });
            }
            Some((b.lower, b.upper))
        }
    };
    if let Some(cost) = &file.controller.cost {
        if cost.len() != m * m {
            return Err(ScenarioError::CostShape { expected: m * m, got: cost.len() });
        }
    }

    let params = CtrlParams {
        kappa: file.controller.kappa,
        rho: file.controller.rho,
        gamma_min: file.controller.gamma_min,
        margin: file.controller.margin,
        lambda: file.controller.lambda,
        mu: file.controller.mu,
        lookahead: file.controller.lookahead,
        cost: file.controller.cost,
    };

    Ok(Scenario {
        name: file.name,
        model: SystemModel {
            state_dim: n,
            input_dim: m,
            drift,
            input_matrix,
            x0: file.model.x0,
            input_box,
        },
        props,
        dra,
        plan_cfg: PlanConfig {
            deadlines: file.plan.deadlines,
            delta: file.plan.delta,
            horizon: file.plan.horizon,
            run_index: file.plan.run_index,
        },
        params,
        guard_overrides: file.guards,
        sim: SimConfig {
            dt: file.sim.dt,
            t_end: file.sim.t_end,
            suffix_cycles: file.sim.suffix_cycles,
        },
    })
}

/// The assembled pipeline for one scenario and run choice.
pub struct Synthesis {
    pub plan: TaskPlan,
    pub guards: GuardAssignment,
    pub barriers: Vec<SpecBarriers>,
    pub run_description: String,
}

/// Pick the run, assign windows, solve/collect guards, and build barriers.
pub fn synthesize(
    scenario: &Scenario,
    run_index: Option<usize>,
    no_guards: bool,
) -> Result<Synthesis, ScenarioError> {
    let runs = scenario.dra.find_accepting_runs(64)?;
    let index = run_index.or(scenario.plan_cfg.run_index).unwrap_or(0);
    let run = runs
        .get(index)
        .ok_or(ScenarioError::RunIndex { index, count: runs.len() })?
        .clone();
    let specs = build_specs(&scenario.dra, &run);

    let (deadlines, delta) = match (&scenario.plan_cfg.deadlines, scenario.plan_cfg.horizon) {
        (Some(d), _) => {
            let delta = scenario.plan_cfg.delta.unwrap_or_else(|| {
                // default: length of the last prefix window
                let mut prev = 0.0;
                let mut last = 1.0;
                for &t in d {
                    last = t - prev;
                    prev = t;
                }
                last
            });
            (d.clone(), delta)
        }
        (None, Some(h)) => uniform_deadlines(&run, h),
        (None, None) => uniform_deadlines(&run, 6.0),
    };
    let plan = assign_windows(&run, specs, &deadlines, delta)
        .map_err(|source| ScenarioError::Plan { source })?;

    let guards = resolve_guards(
        &plan,
        &scenario.props,
        &scenario.model.x0,
        &scenario.params,
        &scenario.guard_overrides,
        no_guards,
    )?;
    let barriers = plan
        .specs
        .iter()
        .map(|s| build_spec_barriers(s, &guards, &scenario.props, scenario.params.lambda))
        .collect::<Result<Vec<_>, _>>()?;
    let run_description = run.format(&scenario.dra);
    Ok(Synthesis { plan, guards, barriers, run_description })
}

/// Exported plan artifact: every synthesis step made observable.
#[derive(Debug, Serialize)]
pub struct PlanArtifact {
    pub scenario: String,
    pub run: String,
    pub delta: f64,
    pub specs: Vec<crate::planner::SpecJson>,
    pub guards: BTreeMap<String, Option<GuardParams>>,
    pub guard_warnings: Vec<GuardWarningJson>,
    pub barriers: Vec<BarrierJson>,
    pub notes: Vec<String>,
}

#[derive(Debug, Serialize)]
pub struct GuardWarningJson {
    pub literal: String,
    pub violations: Vec<String>,
}

#[derive(Debug, Serialize)]
pub struct BarrierJson {
    pub spec: usize,
    pub omega: String,
    pub phase: Option<String>,
    pub pair: Option<String>,
}

pub fn plan_artifact(scenario: &Scenario, syn: &Synthesis) -> PlanArtifact {
    let base = syn.plan.to_json(&scenario.dra);
    let notes = syn
        .plan
        .specs
        .iter()
        .filter(|s| {
            s.phi_stay == crate::formula::LitFormula::False && !s.box_form
        })
        .map(|s| {
            format!(
                "spec {}: the source state has no self-loop, so its progress                  formula must already hold when the window opens",
                s.index
            )
        })
        .collect();
    PlanArtifact {
        scenario: scenario.name.clone(),
        run: base.run,
        delta: base.delta,
        specs: base.specs,
        guards: syn.guards.guards.clone(),
        guard_warnings: syn
            .guards
            .warnings
            .iter()
            .map(|(lit, vs)| GuardWarningJson {
                literal: lit.clone(),
                violations: vs.iter().map(GuardViolation::to_string).collect(),
            })
            .collect(),
        barriers: syn
            .barriers
            .iter()
            .enumerate()
            .map(|(j, sb)| BarrierJson {
                spec: j,
                omega: sb
                    .h_omega
                    .as_ref()
                    .map(|h| h.describe())
                    .unwrap_or_else(|| "true".into()),
                phase: sb.h_phase.as_ref().map(|h| h.describe()),
                pair: sb.h_pair.as_ref().map(|h| h.describe()),
            })
            .collect(),
        notes,
    }
}

/// Default simulation end time: prefix schedule plus the configured number
/// of suffix cycles.
pub fn default_t_end(scenario: &Scenario, plan: &TaskPlan) -> f64 {
    scenario
        .sim
        .t_end
        .unwrap_or(plan.suffix_start + scenario.sim.suffix_cycles as f64 * plan.delta)
}
