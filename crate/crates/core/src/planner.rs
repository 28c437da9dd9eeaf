//! Turns an accepting run into a schedule of formulae with active windows.
//!
//! Each hop `q_j -> q_{j+1}` of the run yields the until-formula
//! `Φ_j U □(φ_j ∧ Φ_{j+1})` that must be discharged inside its window
//! `[t_j, t_{j+1}]`. Suffix windows repeat with period Δ.

use serde::Serialize;
use thiserror::Error;

use crate::automaton::{AcceptingRun, Dra};
use crate::formula::LitFormula;

#[derive(Debug, Clone)]
pub struct FormulaSpec {
    pub index: usize,
    /// Self-loop guard at the source state (mode test; may be `false`).
    pub phi_stay: LitFormula,
    /// Guard of the monitored hop.
    pub phi_hop: LitFormula,
    /// Self-loop guard at the destination state.
    pub phi_next: LitFormula,
    /// `phi_hop ∧ phi_next` — the obligation that must eventually hold.
    pub omega: LitFormula,
    /// Active window `[start, end)`, end inclusive for the final check.
    pub window: (f64, f64),
    pub source: (usize, usize),
    /// Hop is a self-loop or the stay-guard is `true`: the formula reduces
    /// to `□ omega` and is enforced by a single invariance (ZCBF) row.
    pub box_form: bool,
    /// Index into the suffix cycle, if this spec belongs to it.
    pub suffix_pos: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct TaskPlan {
    pub run: AcceptingRun,
    /// Prefix hops followed by one unrolled suffix cycle.
    pub specs: Vec<FormulaSpec>,
    /// Suffix period.
    pub delta: f64,
    /// Start time of the suffix schedule (= last prefix deadline).
    pub suffix_start: f64,
    pub num_prefix: usize,
}

/// A spec instance as seen at a particular time: suffix specs repeat with
/// their windows (and guard schedules) shifted by whole periods.
#[derive(Debug, Clone)]
pub struct SpecInstance {
    pub spec_index: usize,
    pub cycle: usize,
    pub window: (f64, f64),
    /// Time shift to apply to guard functions of this instance.
    pub guard_shift: f64,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum PlanError {
    #[error("deadlines must be strictly increasing and positive (got {0:?})")]
    NonMonotoneDeadlines(Vec<f64>),
    #[error("expected {expected} deadlines (prefix hops + 1), got {got}")]
    WrongDeadlineCount { expected: usize, got: usize },
    #[error("suffix period must be positive when the run has a suffix (got {0})")]
    NonPositiveDelta(f64),
    #[error("run is empty")]
    EmptyRun,
}

/// Build the per-hop formula specs for a run; windows are assigned later.
pub fn build_specs(dra: &Dra, run: &AcceptingRun) -> Vec<FormulaSpec> {
    let states = run.states();
    let mut hops: Vec<(usize, usize)> = states.windows(2).map(|w| (w[0], w[1])).collect();
    let last = *run.suffix.last().unwrap();
    hops.push((last, run.suffix[0]));
    let num_prefix = run.prefix.len();

    hops.iter()
        .enumerate()
        .map(|(index, &(from, to))| {
            let phi_stay = dra.self_loop_guard(from);
            let phi_hop = run
                .transition_guards
                .get(index)
                .cloned()
                .unwrap_or_else(|| dra.hop_guard(from, to));
            let phi_next = dra.self_loop_guard(to);
            let omega = LitFormula::and(phi_hop.clone(), phi_next.clone());
            let box_form = from == to || phi_stay == LitFormula::True;
            let suffix_pos = if index >= num_prefix { Some(index - num_prefix) } else { None };
            FormulaSpec {
                index,
                phi_stay,
                phi_hop,
                phi_next,
                omega,
                window: (0.0, 0.0),
                source: (from, to),
                box_form,
                suffix_pos,
            }
        })
        .collect()
}

/// Assign windows from prefix deadlines `t_1 < … < t_{J+1}` (one per
/// prefix hop, including the hop bridging into the suffix) and suffix
/// period `delta`. The suffix's unrolled cycle divides each period equally
/// among its hops.
pub fn assign_windows(
    run: &AcceptingRun,
    mut specs: Vec<FormulaSpec>,
    deadlines: &[f64],
    delta: f64,
) -> Result<TaskPlan, PlanError> {
    if specs.is_empty() {
        return Err(PlanError::EmptyRun);
    }
    let num_prefix = run.prefix.len();
    let num_suffix = run.suffix.len();
    if deadlines.len() != num_prefix {
        return Err(PlanError::WrongDeadlineCount { expected: num_prefix, got: deadlines.len() });
    }
    let mut prev = 0.0;
    for &d in deadlines {
        if d <= prev {
            return Err(PlanError::NonMonotoneDeadlines(deadlines.to_vec()));
        }
        prev = d;
    }
    if delta <= 0.0 {
        return Err(PlanError::NonPositiveDelta(delta));
    }

    let suffix_start = deadlines.last().copied().unwrap_or(0.0);
    let seg = delta / num_suffix as f64;
    let mut t = 0.0;
    for (j, spec) in specs.iter_mut().enumerate() {
        if j < num_prefix {
            spec.window = (t, deadlines[j]);
            t = deadlines[j];
        } else {
            let k = (j - num_prefix) as f64;
            spec.window = (suffix_start + k * seg, suffix_start + (k + 1.0) * seg);
        }
    }
    Ok(TaskPlan { run: run.clone(), specs, delta, suffix_start, num_prefix })
}

/// Uniform default: split `horizon` evenly over all specs of one unrolling.
pub fn uniform_deadlines(run: &AcceptingRun, horizon: f64) -> (Vec<f64>, f64) {
    let num_prefix = run.prefix.len();
    let num_suffix = run.suffix.len();
    let total = num_prefix + num_suffix;
    let w = horizon / (total.max(1)) as f64;
    let deadlines: Vec<f64> = (1..=num_prefix).map(|k| k as f64 * w).collect();
    (deadlines, w * num_suffix.max(1) as f64)
}

impl TaskPlan {
    /// The instance whose window contains `t` (shared endpoints resolve to
    /// the later spec) plus the next `lookahead` instances.
    pub fn active_specs(&self, t: f64, lookahead: usize) -> Vec<SpecInstance> {
        let first = self.instance_at(t);
        let mut out = vec![self.make_instance(first.0, first.1)];
        let mut cur = first;
        for _ in 0..lookahead {
            match self.next_instance(cur) {
                Some(n) => {
                    out.push(self.make_instance(n.0, n.1));
                    cur = n;
                }
                None => break,
            }
        }
        out
    }

    /// (ordinal position in the schedule, cycle) of the window containing t.
    fn instance_at(&self, t: f64) -> (usize, usize) {
        for (j, spec) in self.specs.iter().enumerate().take(self.num_prefix) {
            if t < spec.window.1 {
                return (j, 0);
            }
        }
        let num_suffix = self.specs.len() - self.num_prefix;
        let rel = (t - self.suffix_start).max(0.0);
        let cycle = (rel / self.delta).floor() as usize;
        let seg = self.delta / num_suffix as f64;
        let pos = (((rel - cycle as f64 * self.delta) / seg).floor() as usize).min(num_suffix - 1);
        (self.num_prefix + pos, cycle)
    }

    fn next_instance(&self, (j, cycle): (usize, usize)) -> Option<(usize, usize)> {
        if j + 1 < self.specs.len() {
            return Some((j + 1, cycle));
        }
        Some((self.num_prefix, cycle + 1))
    }

    fn make_instance(&self, j: usize, cycle: usize) -> SpecInstance {
        let spec = &self.specs[j];
        let shift = cycle as f64 * self.delta;
        SpecInstance {
            spec_index: j,
            cycle,
            window: (spec.window.0 + shift, spec.window.1 + shift),
            guard_shift: shift,
        }
    }

    pub fn to_json(&self, dra: &Dra) -> PlanJson {
        PlanJson {
            run: self.run.format(dra),
            delta: self.delta,
            specs: self
                .specs
                .iter()
                .map(|s| SpecJson {
                    index: s.index,
                    source: dra.states[s.source.0].clone(),
                    target: dra.states[s.source.1].clone(),
                    phi_stay: s.phi_stay.to_string(),
                    phi_hop: s.phi_hop.to_string(),
                    phi_next: s.phi_next.to_string(),
                    omega: s.omega.to_string(),
                    formula: if s.box_form {
                        format!("G({})", s.omega)
                    } else {
                        format!("({}) U G({})", s.phi_stay, s.omega)
                    },
                    window: s.window,
                    box_form: s.box_form,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PlanJson {
    pub run: String,
    pub delta: f64,
    pub specs: Vec<SpecJson>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpecJson {
    pub index: usize,
    pub source: String,
    pub target: String,
    pub phi_stay: String,
    pub phi_hop: String,
    pub phi_next: String,
    pub omega: String,
    pub formula: String,
    pub window: (f64, f64),
    pub box_form: bool,
}
