//! Closed-loop simulation: fixed-step RK4 under a zero-order-hold
//! controller, trace extraction, automaton monitoring, and file output.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::automaton::{Dra, StepOutcome};
use crate::barrier::BarrierOpts;
use crate::controller::{control_step, ControlContext, CtrlError, GainMemo};
use crate::formula::label;
use crate::planner::TaskPlan;

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub inputs: Vec<Vec<f64>>,
    /// Per sample: composite progress barrier of each spec.
    pub h_omega: Vec<Vec<f64>>,
    /// Per sample: stay-or-progress pair barrier of each spec (when defined).
    pub h_pair: Vec<Vec<Option<f64>>>,
    /// Monitored automaton state per sample.
    pub dra_states: Vec<usize>,
}

impl Trajectory {
    fn new() -> Self {
        Trajectory {
            times: Vec::new(),
            states: Vec::new(),
            inputs: Vec::new(),
            h_omega: Vec::new(),
            h_pair: Vec::new(),
            dra_states: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceSegment {
    pub labels: BTreeSet<String>,
    pub enter: f64,
    pub exit: f64,
}

/// Trace of a trajectory: maximal constant-label segments in time order.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    pub segments: Vec<TraceSegment>,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct SpecOutcome {
    pub index: usize,
    pub achieved: bool,
    pub transition_time: Option<f64>,
    pub deadline: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Failure {
    pub kind: FailureKind,
    pub time: f64,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    SpecViolation,
    Infeasible,
    Internal,
}

#[derive(Debug, Clone, Serialize)]
pub struct Verdict {
    pub specs: Vec<SpecOutcome>,
    pub run_consistent: bool,
    pub suffix_cycles_completed: usize,
    pub failure: Option<Failure>,
}

#[derive(Debug)]
pub struct SimResult {
    pub trajectory: Trajectory,
    pub trace: Trace,
    pub verdict: Verdict,
}

/// Classical fourth-order Runge-Kutta step of `ẋ = f(x) + g(x)u` with the
/// input held constant.
pub fn rk4_step(
    model: &crate::controller::SystemModel,
    x: &[f64],
    u: &[f64],
    dt: f64,
) -> Result<Vec<f64>, crate::expr::ExprError> {
    let k1 = model.xdot(x, u)?;
    let x2: Vec<f64> = x.iter().zip(&k1).map(|(xi, ki)| xi + 0.5 * dt * ki).collect();
    let k2 = model.xdot(&x2, u)?;
    let x3: Vec<f64> = x.iter().zip(&k2).map(|(xi, ki)| xi + 0.5 * dt * ki).collect();
    let k3 = model.xdot(&x3, u)?;
    let x4: Vec<f64> = x.iter().zip(&k3).map(|(xi, ki)| xi + dt * ki).collect();
    let k4 = model.xdot(&x4, u)?;
    Ok(x
        .iter()
        .enumerate()
        .map(|(i, xi)| xi + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

/// Run the closed loop on a uniform grid. The controller is re-evaluated at
/// every sample and held over the step; on an inadmissible step (spec
/// violation or infeasible QP) integration halts and the verdict records
/// the failure, returning the partial trajectory.
pub fn simulate(ctx: &ControlContext, dra: &Dra, dt: f64, t_end: f64) -> SimResult {
    assert!(dt > 0.0 && t_end > 0.0, "dt and t_end must be positive");
    let n = (t_end / dt).round() as usize;
    let mut x = ctx.model.x0.clone();
    let mut memo = GainMemo::default();
    let mut traj = Trajectory::new();
    let mut failure: Option<Failure> = None;

    // online monitor: one automaton step per label-set change
    let mut q = dra.initial;
    let mut prev_labels: Option<BTreeSet<String>> = None;

    for k in 0..=n {
        let t = k as f64 * dt;
        let labels = match label(&x, ctx.props) {
            Ok(l) => l,
            Err(e) => {
                failure = Some(Failure {
                    kind: FailureKind::Internal,
                    time: t,
                    detail: e.to_string(),
                });
                break;
            }
        };
        if prev_labels.as_ref() != Some(&labels) {
            match dra.step(q, &labels) {
                Ok(StepOutcome::Moved(next)) => q = next,
                Ok(StepOutcome::NoMove) => {} // recorded by the trace monitor
                Err(e) => {
                    failure = Some(Failure {
                        kind: FailureKind::Internal,
                        time: t,
                        detail: e.to_string(),
                    });
                    break;
                }
            }
            prev_labels = Some(labels);
        }

        let step = control_step(ctx, &x, t, &mut memo);
        let (u, halt) = match step {
            Ok((u, _diag)) => (u, false),
            Err(err) => {
                let kind = match &err {
                    CtrlError::SpecViolation { .. } => FailureKind::SpecViolation,
                    CtrlError::Infeasible { .. } => FailureKind::Infeasible,
                    _ => FailureKind::Internal,
                };
                failure = Some(Failure { kind, time: t, detail: err.to_string() });
                (vec![0.0; ctx.model.input_dim], true)
            }
        };

        record_sample(&mut traj, ctx, t, &x, &u, q);
        if halt {
            break;
        }
        if k < n {
            match rk4_step(ctx.model, &x, &u, dt) {
                Ok(next) => x = next,
                Err(e) => {
                    failure = Some(Failure {
                        kind: FailureKind::Internal,
                        time: t,
                        detail: e.to_string(),
                    });
                    break;
                }
            }
        }
    }

    let trace = extract_trace(&traj, ctx);
    let mut verdict = monitor(dra, &trace, ctx.plan, t_end);
    verdict.failure = failure;
    if verdict.failure.is_some() {
        verdict.run_consistent = false;
    }
    SimResult { trajectory: traj, trace, verdict }
}

fn record_sample(
    traj: &mut Trajectory,
    ctx: &ControlContext,
    t: f64,
    x: &[f64],
    u: &[f64],
    q: usize,
) {
    let mut h_omega = Vec::with_capacity(ctx.barriers.len());
    let mut h_pair = Vec::with_capacity(ctx.barriers.len());
    for (j, sb) in ctx.barriers.iter().enumerate() {
        let shift = suffix_shift(ctx.plan, j, t);
        let opts = BarrierOpts { guard_time_shift: shift, ..Default::default() };
        h_omega.push(match &sb.h_omega {
            Some(ho) => ho.eval(x, t, &opts).map(|r| r.value).unwrap_or(f64::NAN),
            None => f64::INFINITY,
        });
        h_pair.push(match &sb.h_pair {
            Some(hp) => hp.eval(x, t, &opts).ok().map(|r| r.value),
            None => None,
        });
    }
    traj.times.push(t);
    traj.states.push(x.to_vec());
    traj.inputs.push(u.to_vec());
    traj.h_omega.push(h_omega);
    traj.h_pair.push(h_pair);
    traj.dra_states.push(q);
}

/// Guard-schedule shift for suffix specs once their cycling has begun.
fn suffix_shift(plan: &TaskPlan, spec_index: usize, t: f64) -> f64 {
    if plan.specs[spec_index].suffix_pos.is_none() || t < plan.suffix_start {
        return 0.0;
    }
    let cycle = ((t - plan.suffix_start) / plan.delta).floor();
    cycle.max(0.0) * plan.delta
}

/// Label every sample and merge equal consecutive label sets into segments.
/// Segment boundaries are placed at the first sample of the new label set.
pub fn extract_trace(traj: &Trajectory, ctx: &ControlContext) -> Trace {
    let mut segments: Vec<TraceSegment> = Vec::new();
    for (t, x) in traj.times.iter().zip(&traj.states) {
        let labels = match label(x, ctx.props) {
            Ok(l) => l,
            Err(_) => break,
        };
        match segments.last_mut() {
            Some(seg) if seg.labels == labels => seg.exit = *t,
            _ => {
                if let Some(seg) = segments.last_mut() {
                    seg.exit = *t;
                }
                segments.push(TraceSegment { labels, enter: *t, exit: *t });
            }
        }
    }
    Trace { segments }
}

/// Replay the automaton over the trace and compare against the planned run:
/// the visited (collapsed) state sequence must be a prefix of the planned
/// one and each planned hop must occur no later than its spec's deadline.
pub fn monitor(dra: &Dra, trace: &Trace, plan: &TaskPlan, t_end: f64) -> Verdict {
    let planned = plan.run.states();
    let num_prefix = plan.num_prefix;
    let suffix_len = plan.run.suffix.len();

    // replay
    let mut q = dra.initial;
    let mut visited: Vec<(usize, f64)> = vec![(q, 0.0)];
    let mut no_move_at: Option<f64> = None;
    for seg in &trace.segments {
        match dra.step(q, &seg.labels) {
            Ok(StepOutcome::Moved(next)) => {
                if next != q {
                    visited.push((next, seg.enter));
                    q = next;
                }
            }
            Ok(StepOutcome::NoMove) | Err(_) => {
                no_move_at = Some(seg.enter);
                break;
            }
        }
    }

    // expected (collapsed) sequence: prefix+suffix, then the suffix cycling
    let expected_at = |i: usize| -> usize {
        if i < planned.len() {
            planned[i]
        } else {
            let k = (i - num_prefix) % suffix_len;
            plan.run.suffix[k]
        }
    };
    let mut run_consistent = no_move_at.is_none();
    let mut collapsed_expected: Vec<usize> = vec![expected_at(0)];
    {
        let mut i = 0;
        while collapsed_expected.len() < visited.len() + 1 && i < planned.len() + suffix_len * 64 {
            i += 1;
            let s = expected_at(i);
            if *collapsed_expected.last().unwrap() != s {
                collapsed_expected.push(s);
            }
        }
    }
    let mut hop_times: Vec<f64> = Vec::new(); // per observed planned hop
    for (pos, (state, time)) in visited.iter().enumerate() {
        if pos >= collapsed_expected.len() || *state != collapsed_expected[pos] {
            run_consistent = false;
            break;
        }
        if pos > 0 {
            hop_times.push(*time);
        }
    }

    // per-spec outcomes over the planned hop list (one unrolling)
    let mut specs_out = Vec::new();
    let mut collapsed_hop = 0usize;
    for (j, spec) in plan.specs.iter().enumerate() {
        let (from, to) = spec.source;
        let deadline = spec.window.1;
        if from == to {
            // self-loop spec: achieved when the automaton sits in the state
            // at the end of the (horizon-clamped) window
            let upto = deadline.min(t_end);
            let still_there = visited
                .iter()
                .rfind(|(_, tt)| *tt <= upto)
                .map(|(s, _)| *s == from)
                .unwrap_or(false);
            specs_out.push(SpecOutcome {
                index: j,
                achieved: run_consistent && still_there,
                transition_time: None,
                deadline,
            });
        } else {
            let tt = hop_times.get(collapsed_hop).copied();
            collapsed_hop += 1;
            let achieved = tt.map(|t| t <= deadline).unwrap_or(false);
            specs_out.push(SpecOutcome { index: j, achieved, transition_time: tt, deadline });
        }
    }
    // a hop miss only breaks consistency once its deadline is inside the horizon
    if specs_out
        .iter()
        .zip(plan.specs.iter())
        .any(|(o, s)| s.source.0 != s.source.1 && !o.achieved && o.deadline <= t_end)
    {
        run_consistent = false;
    }

    // completed suffix cycles while consistent
    let suffix_cycles_completed = if run_consistent && t_end > plan.suffix_start {
        ((t_end - plan.suffix_start) / plan.delta).floor() as usize
    } else {
        0
    };

    Verdict { specs: specs_out, run_consistent, suffix_cycles_completed, failure: None }
}

/// Format a float with 17 significant digits (round-trippable for f64).
pub fn fmt_float(v: f64) -> String {
    format!("{:.16e}", v)
}

/// Write the trajectory CSV: `t,x1..xn,u1..um,h_spec<k>...,dra_state`.
pub fn write_csv<W: Write>(
    out: &mut W,
    traj: &Trajectory,
    dra: &Dra,
    n: usize,
    m: usize,
    nspecs: usize,
) -> std::io::Result<()> {
    let mut header: Vec<String> = vec!["t".into()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    header.extend((1..=m).map(|i| format!("u{i}")));
    header.extend((0..nspecs).map(|k| format!("h_spec{k}")));
    header.push("dra_state".into());
    writeln!(out, "{}", header.join(","))?;
    for k in 0..traj.len() {
        let mut cols: Vec<String> = vec![fmt_float(traj.times[k])];
        cols.extend(traj.states[k].iter().map(|v| fmt_float(*v)));
        cols.extend(traj.inputs[k].iter().map(|v| fmt_float(*v)));
        cols.extend(traj.h_omega[k].iter().map(|v| fmt_float(*v)));
        cols.push(dra.states[traj.dra_states[k]].clone());
        writeln!(out, "{}", cols.join(","))?;
    }
    Ok(())
}

/// Write CSV and verdict JSON next to each other.
pub fn write_outputs(
    result: &SimResult,
    ctx: &ControlContext,
    dra: &Dra,
    csv_path: &Path,
    verdict_path: &Path,
) -> std::io::Result<()> {
    let mut csv = std::io::BufWriter::new(std::fs::File::create(csv_path)?);
    write_csv(
        &mut csv,
        &result.trajectory,
        dra,
        ctx.model.state_dim,
        ctx.model.input_dim,
        ctx.barriers.len(),
    )?;
    let json = serde_json::to_string_pretty(&result.verdict).expect("verdict serializes");
    std::fs::write(verdict_path, json + "\n")?;
    Ok(())
}
