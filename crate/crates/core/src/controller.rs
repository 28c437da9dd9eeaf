//! Constraint assembly and the per-step controller: ZCBF/FCBF rows from
//! barriers, the stay-or-progress mode logic per spec, finite-time gain
//! tuning, and the quadratic program over the input.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::barrier::{
    check_guard, formula_barrier, softpair, Barrier, BarrierError, BarrierOpts,
    GuardParams, GuardViolation,
};
use crate::expr::{Expr, ExprError};
use crate::formula::{holds, label, literal_z, FormulaError, LitFormula, Literal, PropositionDef};
use crate::planner::{SpecInstance, TaskPlan};
use crate::qp::{solve_qp, QpError, QpRow};

/// Control-affine system `ẋ = f(x) + g(x) u` with optional input box.
#[derive(Debug, Clone)]
pub struct SystemModel {
    pub state_dim: usize,
    pub input_dim: usize,
    pub drift: Vec<Expr>,
    /// `state_dim` rows of `input_dim` entries.
    pub input_matrix: Vec<Vec<Expr>>,
    pub x0: Vec<f64>,
    pub input_box: Option<(Vec<f64>, Vec<f64>)>,
}

impl SystemModel {
    pub fn eval_dynamics(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<Vec<f64>>), ExprError> {
        let f = self
            .drift
            .iter()
            .map(|e| e.eval_grad(x, 0.0).map(|r| r.value))
            .collect::<Result<Vec<_>, _>>()?;
        let g = self
            .input_matrix
            .iter()
            .map(|row| {
                row.iter()
                    .map(|e| e.eval_grad(x, 0.0).map(|r| r.value))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok((f, g))
    }

    /// `f(x) + g(x) u`.
    pub fn xdot(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>, ExprError> {
        let (f, g) = self.eval_dynamics(x)?;
        Ok(f.iter()
            .zip(&g)
            .map(|(fi, gi)| fi + gi.iter().zip(u).map(|(a, b)| a * b).sum::<f64>())
            .collect())
    }
}

/// Controller parameters. `mu` sharpens the softmin used inside constraint
/// rows (1 = plain composition); `margin` budgets both guard solving and
/// finite-time gain tuning.
#[derive(Debug, Clone)]
pub struct CtrlParams {
    pub kappa: f64,
    pub rho: f64,
    pub gamma_min: f64,
    pub margin: f64,
    pub lambda: f64,
    pub mu: f64,
    pub lookahead: usize,
    /// Row-major input cost; identity when absent.
    pub cost: Option<Vec<f64>>,
}

impl Default for CtrlParams {
    fn default() -> Self {
        CtrlParams {
            kappa: 1.0,
            rho: 0.8,
            gamma_min: 1.0,
            margin: 0.8,
            lambda: 10.0,
            mu: 1.0,
            lookahead: 1,
            cost: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RowKind {
    Zcbf,
    Fcbf,
}

/// One affine constraint `a·u + b >= 0` derived from a barrier.
#[derive(Debug, Clone)]
pub struct CbfRow {
    pub a: Vec<f64>,
    pub b: f64,
    pub kind: RowKind,
    pub spec_index: usize,
    pub barrier: String,
}

#[derive(Debug, Clone, Error)]
pub enum CtrlError {
    #[error("no admissible controller at t={t}: spec {spec_index} has neither its progress formula (holds: {omega_holds}) nor its stay formula (holds: {phi_holds}) satisfied")]
    SpecViolation { t: f64, spec_index: usize, phi_holds: bool, omega_holds: bool },
    #[error("QP infeasible at t={t}: {source}")]
    Infeasible { t: f64, source: QpError },
    #[error("QP failed at t={t}: {source}")]
    Qp { t: f64, source: QpError },
    #[error(transparent)]
    Eval(#[from] ExprError),
    #[error(transparent)]
    Formula(#[from] FormulaError),
    #[error(transparent)]
    Barrier(#[from] BarrierError),
}

/// ZCBF row: `∇h·g(x)·u + ∇h·f(x) + ∂h/∂t + κ h ≥ 0`.
pub fn zcbf_row(
    h: &Barrier,
    model: &SystemModel,
    x: &[f64],
    t: f64,
    kappa: f64,
    opts: &BarrierOpts,
    spec_index: usize,
) -> Result<CbfRow, CtrlError> {
    let r = h.eval(x, t, opts)?;
    let (a, drift) = affine_parts(model, x, &r.grad_x)?;
    Ok(CbfRow {
        a,
        b: drift + r.d_dt + kappa * r.value,
        kind: RowKind::Zcbf,
        spec_index,
        barrier: h.describe(),
    })
}

/// FCBF row: `∇h·g(x)·u + ∇h·f(x) + ∂h/∂t + γ sgn(h)|h|^ρ ≥ 0`
/// with `sgn(0)|0|^ρ ≜ 0`.
#[allow(clippy::too_many_arguments)]
pub fn fcbf_row(
    h: &Barrier,
    model: &SystemModel,
    x: &[f64],
    t: f64,
    gamma: f64,
    rho: f64,
    opts: &BarrierOpts,
    spec_index: usize,
) -> Result<CbfRow, CtrlError> {
    let r = h.eval(x, t, opts)?;
    let (a, drift) = affine_parts(model, x, &r.grad_x)?;
    Ok(CbfRow {
        a,
        b: drift + r.d_dt + gamma * signed_power(r.value, rho),
        kind: RowKind::Fcbf,
        spec_index,
        barrier: h.describe(),
    })
}

pub fn signed_power(h: f64, rho: f64) -> f64 {
    if h == 0.0 {
        0.0
    } else {
        h.signum() * h.abs().powf(rho)
    }
}

fn affine_parts(model: &SystemModel, x: &[f64], grad: &[f64]) -> Result<(Vec<f64>, f64), ExprError> {
    let (f, g) = model.eval_dynamics(x)?;
    let drift: f64 = grad.iter().zip(&f).map(|(gi, fi)| gi * fi).sum();
    let mut a = vec![0.0; model.input_dim];
    for (gi, grow) in grad.iter().zip(&g) {
        for (aj, gj) in a.iter_mut().zip(grow) {
            *aj += gi * gj;
        }
    }
    Ok((a, drift))
}

/// Finite-time gain from the predicted convergence time
/// `T = |h0|^{1-ρ} / (γ (1-ρ))`, budgeted to `margin·window`. A state
/// already inside the target set gets the floor `gamma_min`.
pub fn tune_gamma(h0: f64, window: f64, rho: f64, margin: f64, gamma_min: f64) -> f64 {
    if h0 >= 0.0 {
        gamma_min
    } else {
        h0.abs().powf(1.0 - rho) / ((1.0 - rho) * margin * window)
    }
}

/// Per-spec barrier bundle used by the controller.
#[derive(Debug, Clone)]
pub struct SpecBarriers {
    /// Composite of the (deduplicated) progress obligation `φ_j ∧ Φ_{j+1}`;
    /// absent when the obligation simplifies to `true` (no constraint).
    pub h_omega: Option<Barrier>,
    /// Composite of the stay formula with hop-complement literals removed
    /// (the phase invariant "only the self-loop or the monitored hop fires").
    pub h_phase: Option<Barrier>,
    /// Stay-or-progress pair: softmax of the two composites.
    pub h_pair: Option<Barrier>,
}

/// Resolved guard assignment per literal (printed form as key) plus any
/// feasibility warnings from explicit overrides.
#[derive(Debug, Clone, Default)]
pub struct GuardAssignment {
    pub guards: BTreeMap<String, Option<GuardParams>>,
    pub warnings: Vec<(String, Vec<GuardViolation>)>,
}

impl GuardAssignment {
    pub fn guard_for(&self, lit: &Literal) -> Option<GuardParams> {
        self.guards.get(&lit.to_string()).cloned().flatten()
    }
}

/// Decide guard parameters for every literal of the plan. Trigger literals
/// (in the hop guard but not in the destination's self-loop) are guarded —
/// by explicit override when given, otherwise by `solve_guard` against the
/// spec's window end. All other literals stay unguarded unless overridden.
pub fn resolve_guards(
    plan: &TaskPlan,
    props: &[PropositionDef],
    x0: &[f64],
    params: &CtrlParams,
    overrides: &BTreeMap<String, Option<GuardParams>>,
    disable: bool,
) -> Result<GuardAssignment, CtrlError> {
    let mut out = GuardAssignment::default();
    if disable {
        return Ok(out);
    }
    let x0_labels = label(x0, props)?;
    for spec in &plan.specs {
        let next_lits: Vec<Literal> = spec.phi_next.literals().into_iter().cloned().collect();
        for lit in spec.phi_hop.literals() {
            let key = lit.to_string();
            if out.guards.contains_key(&key) {
                continue;
            }
            let is_trigger = !next_lits.contains(lit);
            if let Some(ov) = overrides.get(&key) {
                if let Some(g) = ov {
                    let z0 = literal_z(lit, props, x0)?;
                    let sat = match lit.polarity {
                        crate::formula::Polarity::Positive => x0_labels.contains(&lit.prop),
                        crate::formula::Polarity::Negative => !x0_labels.contains(&lit.prop),
                    };
                    let violations = check_guard(g, z0, sat);
                    if !violations.is_empty() {
                        out.warnings.push((key.clone(), violations));
                    }
                }
                out.guards.insert(key, *ov);
                continue;
            }
            if !is_trigger {
                continue;
            }
            let z0 = literal_z(lit, props, x0)?;
            let sat = z0 >= 0.0;
            let (t0, t1) = spec.window;
            let c = -(t0 + 0.75 * (t1 - t0));
            let g = crate::barrier::solve_guard(z0, sat, t1, 1.0, c, params.margin)?;
            out.guards.insert(key, Some(g));
        }
        // explicit overrides may also target non-hop literals
        for lit in spec.phi_stay.literals().into_iter().chain(spec.phi_next.literals()) {
            let key = lit.to_string();
            if let Some(ov) = overrides.get(&key) {
                out.guards.entry(key).or_insert(*ov);
            }
        }
    }
    Ok(out)
}

/// Drop from the stay formula any literal whose complement appears in the
/// hop guard: taking the monitored hop is allowed during the phase, so its
/// trigger must not be repelled.
pub fn phase_formula(phi_stay: &LitFormula, phi_hop: &LitFormula) -> Option<LitFormula> {
    if !phi_stay.is_conjunction_of_literals() {
        return match phi_stay {
            LitFormula::True | LitFormula::False => None,
            other => Some(other.clone()),
        };
    }
    let hop_lits: Vec<Literal> = phi_hop.literals().into_iter().cloned().collect();
    let mut kept: Vec<Literal> = Vec::new();
    for lit in phi_stay.literals() {
        if hop_lits.contains(&lit.complement()) {
            continue;
        }
        if !kept.contains(lit) {
            kept.push(lit.clone());
        }
    }
    build_conjunction(kept)
}

/// Deduplicated conjunction of the literals of a pure-conjunction formula;
/// other shapes pass through unchanged.
pub fn dedup_conjunction(f: &LitFormula) -> LitFormula {
    if !f.is_conjunction_of_literals() {
        return f.clone();
    }
    let mut kept: Vec<Literal> = Vec::new();
    for lit in f.literals() {
        if !kept.contains(lit) {
            kept.push(lit.clone());
        }
    }
    build_conjunction(kept).unwrap_or_else(|| f.clone())
}

fn build_conjunction(lits: Vec<Literal>) -> Option<LitFormula> {
    let mut iter = lits.into_iter().map(LitFormula::Lit);
    let first = iter.next()?;
    Some(iter.fold(first, LitFormula::and))
}

/// Build the barrier bundle for one spec under a guard assignment.
pub fn build_spec_barriers(
    spec: &crate::planner::FormulaSpec,
    guards: &GuardAssignment,
    props: &[PropositionDef],
    lambda: f64,
) -> Result<SpecBarriers, CtrlError> {
    let gfun = |lit: &Literal| guards.guard_for(lit);
    let omega = dedup_conjunction(&spec.omega.simplify_constants());
    let h_omega = match omega {
        LitFormula::True => None,
        other => Some(formula_barrier(&other, &gfun, props, lambda)?),
    };
    let h_phase = match phase_formula(&spec.phi_stay.simplify_constants(), &spec.phi_hop) {
        None => None,
        Some(f) => Some(formula_barrier(&f, &gfun, props, lambda)?),
    };
    let h_pair = match (&h_phase, &h_omega) {
        (Some(hp), Some(ho)) => Some(softpair(hp.clone(), ho.clone(), lambda)),
        _ => None,
    };
    Ok(SpecBarriers { h_omega, h_phase, h_pair })
}

/// Per-instance finite-time gains, tuned once at window entry.
#[derive(Debug, Clone, Default)]
pub struct GainMemo {
    gains: BTreeMap<(usize, usize), f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SpecMode {
    Omega,
    Phi,
    BoxInvariant,
    Skipped,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpecDiagnostics {
    pub spec_index: usize,
    pub cycle: usize,
    pub mode: SpecMode,
    pub h_omega: f64,
    pub h_pair: Option<f64>,
    pub gamma: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct StepDiagnostics {
    pub t: f64,
    pub specs: Vec<SpecDiagnostics>,
    pub active_rows: Vec<String>,
    pub qp_iterations: usize,
    pub kkt_residual: f64,
}

/// Whether every spec is constrained simultaneously (the unstaggered
/// baseline) or per its scheduled window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    Windows,
    Simultaneous,
}

pub struct ControlContext<'a> {
    pub plan: &'a TaskPlan,
    pub barriers: &'a [SpecBarriers],
    pub model: &'a SystemModel,
    pub props: &'a [PropositionDef],
    pub params: &'a CtrlParams,
    pub schedule: Schedule,
}

/// Assemble the constraint rows for one spec instance per the mode logic:
/// progress formula holds — keep converging on it (FCBF only); stay formula
/// holds — maintain the stay-or-progress pair (ZCBF) while converging;
/// neither — no admissible controller. Lookahead instances contribute only
/// their ZCBF row and are skipped without error when unsatisfied.
#[allow(clippy::too_many_arguments)]
pub fn spec_constraints(
    ctx: &ControlContext,
    inst: &SpecInstance,
    active: bool,
    x: &[f64],
    t: f64,
    memo: &mut GainMemo,
) -> Result<(Vec<CbfRow>, SpecDiagnostics), CtrlError> {
    let spec = &ctx.plan.specs[inst.spec_index];
    let sb = &ctx.barriers[inst.spec_index];
    let params = ctx.params;
    let row_opts = BarrierOpts {
        mu: params.mu,
        clamp_guards: true,
        guard_time_shift: inst.guard_shift,
        ..Default::default()
    };
    let report_opts = BarrierOpts { guard_time_shift: inst.guard_shift, ..Default::default() };

    let omega_holds = holds(&spec.omega, x, ctx.props)?;
    let phi_holds = holds(&spec.phi_stay, x, ctx.props)?;
    let h_omega_report = match &sb.h_omega {
        Some(ho) => ho.eval(x, t, &report_opts)?.value,
        None => f64::INFINITY,
    };
    let h_pair_report = match &sb.h_pair {
        Some(hp) => Some(hp.eval(x, t, &report_opts)?.value),
        None => None,
    };

    let mut rows = Vec::new();
    let mut mode = SpecMode::Skipped;
    let mut gamma_used = None;

    if spec.box_form {
        if omega_holds {
            mode = SpecMode::BoxInvariant;
            if let Some(ho) = &sb.h_omega {
                rows.push(zcbf_row(ho, ctx.model, x, t, params.kappa, &row_opts, spec.index)?);
            }
        } else if active {
            return Err(CtrlError::SpecViolation {
                t,
                spec_index: spec.index,
                phi_holds,
                omega_holds,
            });
        }
    } else if active {
        let key = (inst.spec_index, inst.cycle);
        if omega_holds || phi_holds {
            if let Some(ho) = &sb.h_omega {
                let gamma = match memo.gains.get(&key) {
                    Some(g) => *g,
                    None => {
                        // tuned once, at the first constrained step of this
                        // window instance, then held fixed
                        let h0 = ho.eval(x, t, &row_opts)?.value;
                        let window = spec.window.1 - spec.window.0;
                        let g =
                            tune_gamma(h0, window, params.rho, params.margin, params.gamma_min);
                        memo.gains.insert(key, g);
                        g
                    }
                };
                gamma_used = Some(gamma);
                mode = if omega_holds { SpecMode::Omega } else { SpecMode::Phi };
                if !omega_holds {
                    if let Some(hp) = &sb.h_pair {
                        rows.push(zcbf_row(
                            hp, ctx.model, x, t, params.kappa, &row_opts, spec.index,
                        )?);
                    }
                }
                rows.push(fcbf_row(
                    ho, ctx.model, x, t, gamma, params.rho, &row_opts, spec.index,
                )?);
            } else {
                // trivial obligation: nothing to enforce
                mode = SpecMode::Omega;
            }
        } else {
            return Err(CtrlError::SpecViolation {
                t,
                spec_index: spec.index,
                phi_holds,
                omega_holds,
            });
        }
    } else if phi_holds {
        // lookahead: maintain the stay-or-progress pair, defer convergence
        mode = SpecMode::Phi;
        if let Some(hp) = &sb.h_pair {
            rows.push(zcbf_row(hp, ctx.model, x, t, params.kappa, &row_opts, spec.index)?);
        }
    }

    Ok((
        rows,
        SpecDiagnostics {
            spec_index: inst.spec_index,
            cycle: inst.cycle,
            mode,
            h_omega: h_omega_report,
            h_pair: h_pair_report,
            gamma: gamma_used,
        },
    ))
}

/// One controller evaluation: collect rows over the scheduled instances,
/// append input-box rows, and solve the QP.
pub fn control_step(
    ctx: &ControlContext,
    x: &[f64],
    t: f64,
    memo: &mut GainMemo,
) -> Result<(Vec<f64>, StepDiagnostics), CtrlError> {
    let m = ctx.model.input_dim;
    let instances: Vec<(SpecInstance, bool)> = match ctx.schedule {
        Schedule::Windows => {
            let insts = ctx.plan.active_specs(t, ctx.params.lookahead);
            insts
                .into_iter()
                .enumerate()
                .map(|(i, inst)| (inst, i == 0))
                .collect()
        }
        Schedule::Simultaneous => (0..ctx.plan.specs.len())
            .map(|j| {
                (
                    SpecInstance {
                        spec_index: j,
                        cycle: 0,
                        window: ctx.plan.specs[j].window,
                        guard_shift: 0.0,
                    },
                    true,
                )
            })
            .collect(),
    };

    let mut rows: Vec<CbfRow> = Vec::new();
    let mut diags = Vec::new();
    for (inst, active) in &instances {
        let (mut r, d) = spec_constraints(ctx, inst, *active, x, t, memo)?;
        rows.append(&mut r);
        diags.push(d);
    }

    let mut qp_rows: Vec<QpRow> = rows.iter().map(|r| QpRow { a: r.a.clone(), b: r.b }).collect();
    if let Some((lo, hi)) = &ctx.model.input_box {
        for i in 0..m {
            let mut e = vec![0.0; m];
            e[i] = 1.0;
            qp_rows.push(QpRow { a: e.clone(), b: -lo[i] });
            let mut ne = vec![0.0; m];
            ne[i] = -1.0;
            qp_rows.push(QpRow { a: ne, b: hi[i] });
        }
    }

    let ident: Vec<f64>;
    let p = match &ctx.params.cost {
        Some(p) => p.as_slice(),
        None => {
            ident = {
                let mut p = vec![0.0; m * m];
                for i in 0..m {
                    p[i * m + i] = 1.0;
                }
                p
            };
            ident.as_slice()
        }
    };

    let sol = solve_qp(p, m, &qp_rows).map_err(|e| match e {
        QpError::Infeasible { .. } => CtrlError::Infeasible { t, source: e },
        other => CtrlError::Qp { t, source: other },
    })?;

    let active_rows = sol
        .active
        .iter()
        .map(|&i| {
            if i < rows.len() {
                format!("spec{} {:?} {}", rows[i].spec_index, rows[i].kind, rows[i].barrier)
            } else {
                format!("input-box[{}]", i - rows.len())
            }
        })
        .collect();

    Ok((
        sol.u,
        StepDiagnostics {
            t,
            specs: diags,
            active_rows,
            qp_iterations: sol.iterations,
            kkt_residual: sol.kkt_residual,
        },
    ))
}
