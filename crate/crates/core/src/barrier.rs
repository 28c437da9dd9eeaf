//! Time-varying control barrier functions: logistic guard solving (the
//! feasibility inequalities on `M(0)`, `M(t_d)` and the sign constraints),
//! atomic barriers `h = M(t) + Z(x)`, and smooth recursive composition.
//!
//! Conjunction composes by log-sum-exp from below,
//! `h = -ln(e^{-h_a} + e^{-h_b})`, disjunction by the softmax-weighted mean
//! with sharpness `λ`. Both are evaluated in shifted form so large barrier
//! values cannot overflow.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{EvalResult, Expr, ExprError, DEFAULT_DELTA};
use crate::formula::{LitFormula, Literal, Polarity, PropositionDef};

/// Logistic guard `M(t) = E / (1 + e^{-b (t + c)}) - eps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuardParams {
    #[serde(rename = "E")]
    pub amplitude: f64,
    #[serde(rename = "b")]
    pub rate: f64,
    #[serde(rename = "c")]
    pub shift: f64,
    #[serde(rename = "eps")]
    pub offset: f64,
    pub certify_until: f64,
}

impl GuardParams {
    pub fn value(&self, t: f64) -> f64 {
        self.amplitude * sigmoid(self.rate * (t + self.shift)) - self.offset
    }

    pub fn derivative(&self, t: f64) -> f64 {
        let s = sigmoid(self.rate * (t + self.shift));
        self.amplitude * self.rate * s * (1.0 - s)
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// One violated inequality from [`check_guard`], with its residual.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GuardViolation {
    pub constraint: GuardConstraint,
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum GuardConstraint {
    /// `M(0) + z0 >= 0` required when the literal holds initially.
    InitialSat,
    /// `M(0) + z0 < 0` required when the literal fails initially.
    InitialUnsat,
    /// `M(certify_until) <= 0`.
    NonPositiveAtDeadline,
    /// `E > 0`, `b > 0`, `eps >= 0`.
    SignConstraints,
}

impl std::fmt::Display for GuardViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self.constraint {
            GuardConstraint::InitialSat => "M(0)+z0 >= 0",
            GuardConstraint::InitialUnsat => "M(0)+z0 < 0",
            GuardConstraint::NonPositiveAtDeadline => "M(t_d) <= 0",
            GuardConstraint::SignConstraints => "E > 0, b > 0, eps >= 0",
        };
        write!(f, "{name} violated (residual {:+.6})", self.residual)
    }
}

/// Verify the guard feasibility inequalities for a literal with initial
/// state-function value `z0` that initially holds (`sat`) or not.
pub fn check_guard(g: &GuardParams, z0: f64, sat: bool) -> Vec<GuardViolation> {
    let mut out = Vec::new();
    if !(g.amplitude > 0.0 && g.rate > 0.0 && g.offset >= 0.0) {
        out.push(GuardViolation {
            constraint: GuardConstraint::SignConstraints,
            residual: g.amplitude.min(g.rate).min(g.offset),
        });
    }
    let h0 = g.value(0.0) + z0;
    if sat && h0 < 0.0 {
        out.push(GuardViolation { constraint: GuardConstraint::InitialSat, residual: h0 });
    }
    if !sat && h0 >= 0.0 {
        out.push(GuardViolation { constraint: GuardConstraint::InitialUnsat, residual: h0 });
    }
    let md = g.value(g.certify_until);
    if md > 0.0 {
        out.push(GuardViolation { constraint: GuardConstraint::NonPositiveAtDeadline, residual: md });
    }
    out
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum BarrierError {
    #[error("guard infeasible: literal holds initially but z0 = {z0} is not strictly positive")]
    InfeasibleGuard { z0: f64 },
    #[error("boolean constant inside a composed formula has no finite barrier")]
    ConstantInComposition,
    #[error("unknown proposition '{0}'")]
    UnknownProposition(String),
    #[error(transparent)]
    Eval(#[from] ExprError),
}

/// Closed-form feasible point for the guard inequalities: fixes `b`, `c`,
/// sets `eps = E s(t_d)` (so `M(t_d) = 0`), and for initially-true literals
/// scales `E` so that `M(0) + z0 = (1 - margin) z0 > 0`.
pub fn solve_guard(
    z0: f64,
    sat: bool,
    t_d: f64,
    b: f64,
    c: f64,
    margin: f64,
) -> Result<GuardParams, BarrierError> {
    let s0 = sigmoid(b * c);
    let sd = sigmoid(b * (t_d + c));
    let amplitude = if sat {
        if z0 <= 0.0 {
            return Err(BarrierError::InfeasibleGuard { z0 });
        }
        margin * z0 / (sd - s0)
    } else {
        1.0
    };
    Ok(GuardParams { amplitude, rate: b, shift: c, offset: amplitude * sd, certify_until: t_d })
}

/// Evaluation options threaded through a barrier tree.
#[derive(Debug, Clone, Copy)]
pub struct BarrierOpts {
    /// Sharpness of the conjunction log-sum-exp; 1 is the plain composition.
    pub mu: f64,
    /// Clamp guard functions at zero (`min(M, 0)`): used for controller rows
    /// so a guard that turns positive cannot pre-satisfy a proposition.
    pub clamp_guards: bool,
    /// Shift applied to guard time (suffix cycles repeat their schedule).
    pub guard_time_shift: f64,
    /// Norm smoothing constant.
    pub delta: f64,
}

impl Default for BarrierOpts {
    fn default() -> Self {
        BarrierOpts { mu: 1.0, clamp_guards: false, guard_time_shift: 0.0, delta: DEFAULT_DELTA }
    }
}

/// An evaluable barrier `h(x, t)` with exact gradients.
#[derive(Debug, Clone)]
pub enum Barrier {
    Atomic {
        lit: Literal,
        zfun: Expr,
        sign: f64,
        guard: Option<GuardParams>,
    },
    Conj(Box<Barrier>, Box<Barrier>),
    Disj(Box<Barrier>, Box<Barrier>, f64),
    SoftPair(Box<Barrier>, Box<Barrier>, f64),
}

impl Barrier {
    pub fn eval(&self, x: &[f64], t: f64, opts: &BarrierOpts) -> Result<EvalResult, ExprError> {
        match self {
            Barrier::Atomic { zfun, sign, guard, .. } => {
                let mut r = zfun.eval_grad_delta(x, t, opts.delta)?;
                r.value *= sign;
                for g in &mut r.grad_x {
                    *g *= sign;
                }
                r.d_dt *= sign;
                if let Some(g) = guard {
                    let tg = t - opts.guard_time_shift;
                    let (m, md) = if opts.clamp_guards && g.value(tg) >= 0.0 {
                        (0.0, 0.0)
                    } else {
                        (g.value(tg), g.derivative(tg))
                    };
                    r.value += m;
                    r.d_dt += md;
                }
                Ok(r)
            }
            Barrier::Conj(a, b) => {
                let (a, b) = (a.eval(x, t, opts)?, b.eval(x, t, opts)?);
                Ok(compose_conj_values(&a, &b, opts.mu))
            }
            Barrier::Disj(a, b, lambda) | Barrier::SoftPair(a, b, lambda) => {
                let (a, b) = (a.eval(x, t, opts)?, b.eval(x, t, opts)?);
                Ok(compose_disj_values(&a, &b, *lambda))
            }
        }
    }

    /// Literals at the leaves, left to right.
    pub fn leaves(&self) -> Vec<&Literal> {
        match self {
            Barrier::Atomic { lit, .. } => vec![lit],
            Barrier::Conj(a, b) | Barrier::Disj(a, b, _) | Barrier::SoftPair(a, b, _) => {
                let mut v = a.leaves();
                v.extend(b.leaves());
                v
            }
        }
    }

    /// Structure summary, e.g. `min(h[B], h[!O], h[C])`.
    pub fn describe(&self) -> String {
        match self {
            Barrier::Atomic { lit, guard, .. } => {
                if guard.is_some() {
                    format!("h[{lit}]")
                } else {
                    format!("z[{lit}]")
                }
            }
            Barrier::Conj(a, b) => format!("min({}, {})", a.describe(), b.describe()),
            Barrier::Disj(a, b, _) => format!("max({}, {})", a.describe(), b.describe()),
            Barrier::SoftPair(a, b, _) => format!("pair({}, {})", a.describe(), b.describe()),
        }
    }
}

/// `h = -(1/mu) ln(e^{-mu h_a} + e^{-mu h_b})`, shifted to avoid overflow.
fn compose_conj_values(a: &EvalResult, b: &EvalResult, mu: f64) -> EvalResult {
    let m = a.value.min(b.value);
    let ea = (-mu * (a.value - m)).exp();
    let eb = (-mu * (b.value - m)).exp();
    let sum = ea + eb;
    let value = m - sum.ln() / mu;
    let (wa, wb) = (ea / sum, eb / sum);
    EvalResult {
        value,
        grad_x: a
            .grad_x
            .iter()
            .zip(&b.grad_x)
            .map(|(ga, gb)| wa * ga + wb * gb)
            .collect(),
        d_dt: wa * a.d_dt + wb * b.d_dt,
    }
}

/// `h = (h_a e^{λh_a} + h_b e^{λh_b}) / (e^{λh_a} + e^{λh_b})`, shifted.
fn compose_disj_values(a: &EvalResult, b: &EvalResult, lambda: f64) -> EvalResult {
    let m = a.value.max(b.value);
    let ea = (lambda * (a.value - m)).exp();
    let eb = (lambda * (b.value - m)).exp();
    let sum = ea + eb;
    let value = (a.value * ea + b.value * eb) / sum;
    let ca = (ea / sum) * (1.0 + lambda * (a.value - value));
    let cb = (eb / sum) * (1.0 + lambda * (b.value - value));
    EvalResult {
        value,
        grad_x: a
            .grad_x
            .iter()
            .zip(&b.grad_x)
            .map(|(ga, gb)| ca * ga + cb * gb)
            .collect(),
        d_dt: ca * a.d_dt + cb * b.d_dt,
    }
}

pub fn compose_conj(a: Barrier, b: Barrier) -> Barrier {
    Barrier::Conj(Box::new(a), Box::new(b))
}

pub fn compose_disj(a: Barrier, b: Barrier, lambda: f64) -> Barrier {
    Barrier::Disj(Box::new(a), Box::new(b), lambda)
}

/// Same arithmetic as [`compose_disj`]; kept distinct so diagnostics can
/// tell the stay-or-progress pair from a formula disjunction.
pub fn softpair(h_stay: Barrier, h_progress: Barrier, lambda: f64) -> Barrier {
    Barrier::SoftPair(Box::new(h_stay), Box::new(h_progress), lambda)
}

/// Barrier of a single literal: `h = M(t) + Z_lit(x)` with `Z_!p = -Z_p`.
pub fn atomic_barrier(
    lit: &Literal,
    guard: Option<GuardParams>,
    props: &[PropositionDef],
) -> Result<Barrier, BarrierError> {
    let def = props
        .iter()
        .find(|p| p.name == lit.prop)
        .ok_or_else(|| BarrierError::UnknownProposition(lit.prop.clone()))?;
    Ok(Barrier::Atomic {
        lit: lit.clone(),
        zfun: def.zfun.clone(),
        sign: match lit.polarity {
            Polarity::Positive => 1.0,
            Polarity::Negative => -1.0,
        },
        guard,
    })
}

/// Recursive composition over an NNF formula: conjunctions fold with the
/// log-sum-exp bound, disjunctions with the softmax mean. Boolean constants
/// are rejected — no finite barrier represents them without distorting the
/// composition.
pub fn formula_barrier(
    formula: &LitFormula,
    guard_for: &dyn Fn(&Literal) -> Option<GuardParams>,
    props: &[PropositionDef],
    lambda: f64,
) -> Result<Barrier, BarrierError> {
    match formula {
        LitFormula::True | LitFormula::False => Err(BarrierError::ConstantInComposition),
        LitFormula::Lit(l) => atomic_barrier(l, guard_for(l), props),
        LitFormula::And(a, b) => Ok(compose_conj(
            formula_barrier(a, guard_for, props, lambda)?,
            formula_barrier(b, guard_for, props, lambda)?,
        )),
        LitFormula::Or(a, b) => Ok(compose_disj(
            formula_barrier(a, guard_for, props, lambda)?,
            formula_barrier(b, guard_for, props, lambda)?,
            lambda,
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_expr;
    use crate::formula::parse_formula;
    use approx::assert_abs_diff_eq;

    fn reach_b_guard() -> GuardParams {
        GuardParams { amplitude: 1.0, rate: 1.0, shift: -1.5, offset: 0.63, certify_until: 2.0 }
    }

    fn reach_a_guard() -> GuardParams {
        GuardParams { amplitude: 1.0, rate: 1.0, shift: -0.5, offset: 0.9, certify_until: 4.0 }
    }

    #[test]
    fn reach_b_guard_passes_at_deadline_two() {
        let g = reach_b_guard();
        assert_abs_diff_eq!(g.value(0.0), -0.44757447619364366, epsilon = 1e-12);
        assert_abs_diff_eq!(g.value(2.0), -0.007540668798145411, epsilon = 1e-12);
        assert!(check_guard(&g, -0.8, false).is_empty());
    }

    #[test]
    fn reach_a_guard_fails_deadline_four_passes_two() {
        let g = reach_a_guard();
        let violations = check_guard(&g, -0.8198039027185571, false);
        assert_eq!(violations.len(), 1);
        assert_eq!(violations[0].constraint, GuardConstraint::NonPositiveAtDeadline);
        assert_abs_diff_eq!(violations[0].residual, 0.07068776924864362, epsilon = 1e-12);
        let g2 = GuardParams { certify_until: 2.0, ..g };
        assert!(check_guard(&g2, -0.8198039027185571, false).is_empty());
    }

    #[test]
    fn zero_amplitude_violates_sign_constraints() {
        let g = GuardParams { amplitude: 0.0, rate: 1.0, shift: 0.0, offset: 0.0, certify_until: 1.0 };
        let violations = check_guard(&g, 0.5, true);
        assert!(violations.iter().any(|v| v.constraint == GuardConstraint::SignConstraints));
    }

    #[test]
    fn solve_guard_unsat_matches_closed_form() {
        let g = solve_guard(-0.8, false, 2.0, 1.0, -1.5, 0.8).unwrap();
        assert_eq!(g.amplitude, 1.0);
        assert_abs_diff_eq!(g.offset, 0.6224593312018546, epsilon = 1e-12);
        assert!(check_guard(&g, -0.8, false).is_empty());
    }

    #[test]
    fn solve_guard_sat_matches_closed_form() {
        let g = solve_guard(1.0, true, 2.0, 1.0, 0.0, 0.8).unwrap();
        assert_abs_diff_eq!(g.amplitude, 2.100856456798931, epsilon = 1e-9);
        assert_abs_diff_eq!(g.offset, g.amplitude * sigmoid(2.0), epsilon = 1e-12);
        assert!(check_guard(&g, 1.0, true).is_empty());
    }

    #[test]
    fn solve_guard_boundary_start_infeasible() {
        assert_eq!(
            solve_guard(0.0, true, 2.0, 1.0, 0.0, 0.8).unwrap_err(),
            BarrierError::InfeasibleGuard { z0: 0.0 }
        );
    }

    #[test]
    fn solve_guard_round_trip_fuzz() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for _ in 0..500 {
            let z0: f64 = rng.gen_range(-5.0..5.0);
            let sat = z0 > 0.0;
            let t_d: f64 = rng.gen_range(0.05..10.0);
            let b: f64 = rng.gen_range(0.05..5.0);
            let c: f64 = rng.gen_range(-2.0 * t_d..t_d);
            let margin: f64 = rng.gen_range(0.05..0.95);
            let g = solve_guard(z0, sat, t_d, b, c, margin).unwrap();
            let violations = check_guard(&g, z0, sat);
            assert!(violations.is_empty(), "z0={z0} sat={sat} t_d={t_d} b={b} c={c}: {violations:?}");
        }
    }

    #[test]
    fn guard_monotone_increasing_and_nonpositive_before_deadline() {
        let g = reach_b_guard();
        let mut prev = f64::NEG_INFINITY;
        let mut t = -2.0;
        while t <= g.certify_until {
            let m = g.value(t);
            assert!(m > prev, "not strictly increasing at t={t}");
            assert!(m <= 0.0, "M({t}) = {m} > 0 before certify_until");
            prev = m;
            t += 0.05;
        }
    }

    fn props() -> Vec<PropositionDef> {
        [
            ("A", "0.2 - norm2(x1 - 0.6, x2 - 0.3)"),
            ("B", "0.2 - norm2(x3 - 0.4, x4 + 0.5)"),
            ("O", "0.18 - norm2(x1 - 0.22, x2 + 0.05, x3 - 0.22, x4 + 0.05)"),
            ("C", "sqrt(x3 * x3 + 0.39) - norm2(x1 - x3, x2 - x4)"),
        ]
        .iter()
        .map(|(n, z)| PropositionDef { name: n.to_string(), zfun: parse_expr(z, 4).unwrap() })
        .collect()
    }

    const X0: [f64; 4] = [-0.4, 0.1, -0.4, 0.1];

    #[test]
    fn atomic_barrier_of_goal_b() {
        let h = atomic_barrier(&Literal::positive("B"), Some(reach_b_guard()), &props()).unwrap();
        let r = h.eval(&X0, 0.0, &BarrierOpts::default()).unwrap();
        assert_abs_diff_eq!(r.value, -1.2475744761936437, epsilon = 1e-9);
    }

    #[test]
    fn atomic_barrier_negative_literal_at_obstacle_center() {
        let h = atomic_barrier(&Literal::negative("O"), None, &props()).unwrap();
        let center = [0.22, -0.05, 0.22, -0.05];
        let r = h.eval(&center, 0.0, &BarrierOpts::default()).unwrap();
        assert_abs_diff_eq!(r.value, -0.18, epsilon = 1e-8);
    }

    #[test]
    fn atomic_barrier_zero_state_function() {
        let props = vec![PropositionDef { name: "Z".into(), zfun: parse_expr("0", 1).unwrap() }];
        let h = atomic_barrier(&Literal::positive("Z"), None, &props).unwrap();
        let r = h.eval(&[3.0], 1.0, &BarrierOpts::default()).unwrap();
        assert_eq!(r.value, 0.0);
        assert_eq!(r.d_dt, 0.0);
    }

    fn const_barrier(v: f64) -> Barrier {
        Barrier::Atomic {
            lit: Literal::positive("K"),
            zfun: Expr::Const(v),
            sign: 1.0,
            guard: None,
        }
    }

    fn eval1(b: &Barrier) -> f64 {
        b.eval(&[0.0], 0.0, &BarrierOpts::default()).unwrap().value
    }

    #[test]
    fn conj_of_equal_values() {
        let h = compose_conj(const_barrier(0.0), const_barrier(0.0));
        assert_abs_diff_eq!(eval1(&h), -(2.0f64.ln()), epsilon = 1e-12);
    }

    #[test]
    fn conj_dominated_by_smaller() {
        let h = compose_conj(const_barrier(5.0), const_barrier(0.0));
        assert_abs_diff_eq!(eval1(&h), -(1.0 + (-5.0f64).exp()).ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(eval1(&h), -0.006715348489118068, epsilon = 1e-9);
    }

    #[test]
    fn conj_no_overflow_for_huge_arguments() {
        let h = compose_conj(const_barrier(1000.0), const_barrier(0.0));
        let v = eval1(&h);
        assert!(v.is_finite());
        assert_abs_diff_eq!(v, 0.0, epsilon = 1e-12);
        let h2 = compose_conj(const_barrier(-1000.0), const_barrier(-1000.0));
        assert_abs_diff_eq!(eval1(&h2), -1000.0 - 2.0f64.ln(), epsilon = 1e-9);
    }

    #[test]
    fn disj_of_equal_values_is_exact() {
        for c in [-3.0, 0.0, 7.5] {
            let h = compose_disj(const_barrier(c), const_barrier(c), 10.0);
            assert_abs_diff_eq!(eval1(&h), c, epsilon = 1e-12);
        }
    }

    #[test]
    fn disj_approaches_max_from_below() {
        let h = compose_disj(const_barrier(1.0), const_barrier(0.0), 10.0);
        let v = eval1(&h);
        assert!(v <= 1.0);
        assert_abs_diff_eq!(v, 0.9999546021312976, epsilon = 1e-9);
    }

    #[test]
    fn disj_dominance_of_much_larger() {
        let h = compose_disj(const_barrier(0.0), const_barrier(-50.0), 1.0);
        assert_abs_diff_eq!(eval1(&h), -9.64e-21, epsilon = 1e-22);
    }

    #[test]
    fn composition_bounds_fuzz() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let a: f64 = rng.gen_range(-20.0..20.0);
            let b: f64 = rng.gen_range(-20.0..20.0);
            let lambda: f64 = rng.gen_range(0.1..20.0);
            let conj = eval1(&compose_conj(const_barrier(a), const_barrier(b)));
            let disj = eval1(&compose_disj(const_barrier(a), const_barrier(b), lambda));
            let lo = a.min(b);
            let hi = a.max(b);
            assert!(conj <= lo + 1e-12, "conj {conj} above min {lo}");
            assert!(conj >= lo - 2.0f64.ln() - 1e-12, "conj {conj} below min - ln2");
            assert!(disj <= hi + 1e-12, "disj {disj} above max {hi}");
        }
    }

    #[test]
    fn formula_barrier_structure() {
        let f = parse_formula("(A | B) & C").unwrap();
        let h = formula_barrier(&f, &|_| None, &props(), 10.0).unwrap();
        assert_eq!(h.describe(), "min(max(z[A], z[B]), z[C])");
    }

    #[test]
    fn formula_barrier_single_literal_unchanged() {
        let f = parse_formula("!O").unwrap();
        let h = formula_barrier(&f, &|_| None, &props(), 10.0).unwrap();
        assert!(matches!(h, Barrier::Atomic { .. }));
    }

    #[test]
    fn suffix_safety_barrier_matches_hand_formula() {
        // softmin of (-Z_O, Z_C) with no guards
        let f = parse_formula("!O & C").unwrap();
        let h = formula_barrier(&f, &|_| None, &props(), 10.0).unwrap();
        let r = h.eval(&X0, 0.0, &BarrierOpts::default()).unwrap();
        let zo = props()[2].zfun.eval_grad(&X0, 0.0).unwrap().value;
        let zc = props()[3].zfun.eval_grad(&X0, 0.0).unwrap().value;
        let expected = -(((zo).exp()) + (-zc).exp()).ln();
        assert_abs_diff_eq!(r.value, expected, epsilon = 1e-12);
    }

    #[test]
    fn constants_rejected_in_composition() {
        let f = parse_formula("true").unwrap();
        assert_eq!(
            formula_barrier(&f, &|_| None, &props(), 10.0).unwrap_err(),
            BarrierError::ConstantInComposition
        );
    }

    #[test]
    fn sharpened_conjunction_tightens_toward_min() {
        let f = parse_formula("!O & C").unwrap();
        let h = formula_barrier(&f, &|_| None, &props(), 10.0).unwrap();
        let plain = h.eval(&X0, 0.0, &BarrierOpts::default()).unwrap().value;
        let sharp = h
            .eval(&X0, 0.0, &BarrierOpts { mu: 20.0, ..Default::default() })
            .unwrap()
            .value;
        let zo = -props()[2].zfun.eval_grad(&X0, 0.0).unwrap().value;
        let zc = props()[3].zfun.eval_grad(&X0, 0.0).unwrap().value;
        let exact_min = zo.min(zc);
        assert!(sharp <= exact_min);
        assert!(sharp > plain);
        assert!(exact_min - sharp <= 2.0f64.ln() / 20.0 + 1e-12);
    }

    #[test]
    fn guard_clamp_zeroes_positive_guard() {
        let g = GuardParams { amplitude: 1.0, rate: 1.0, shift: 0.0, offset: 0.6, certify_until: 1.0 };
        let h = atomic_barrier(&Literal::positive("B"), Some(g), &props()).unwrap();
        assert!(g.value(0.0) < 0.0);
        let t = 3.0; // M(3) > 0
        assert!(g.value(t) > 0.0);
        let plain = h.eval(&X0, t, &BarrierOpts::default()).unwrap();
        let clamped = h
            .eval(&X0, t, &BarrierOpts { clamp_guards: true, ..Default::default() })
            .unwrap();
        assert!(clamped.value < plain.value);
        assert_eq!(clamped.d_dt, 0.0);
        // before the zero crossing the clamp is inactive
        let early = h
            .eval(&X0, 0.0, &BarrierOpts { clamp_guards: true, ..Default::default() })
            .unwrap();
        let plain_early = h.eval(&X0, 0.0, &BarrierOpts::default()).unwrap();
        assert_eq!(early.value, plain_early.value);
    }

    #[test]
    fn guard_time_shift_replays_schedule() {
        let g = reach_b_guard();
        let h = atomic_barrier(&Literal::positive("B"), Some(g), &props()).unwrap();
        let base = h.eval(&X0, 1.0, &BarrierOpts::default()).unwrap().value;
        let shifted = h
            .eval(&X0, 5.0, &BarrierOpts { guard_time_shift: 4.0, ..Default::default() })
            .unwrap()
            .value;
        assert_abs_diff_eq!(base, shifted, epsilon = 1e-12);
    }

    #[test]
    fn composed_gradients_match_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let props = props();
        let formulas = ["B & !A & !O & C", "(A | B) & C", "!O & C", "A & !O & C"];
        let opts = BarrierOpts::default();
        for f in formulas {
            let formula = parse_formula(f).unwrap();
            let h = formula_barrier(
                &formula,
                &|lit| {
                    if lit.prop == "B" {
                        Some(reach_b_guard())
                    } else {
                        None
                    }
                },
                &props,
                10.0,
            )
            .unwrap();
            for _ in 0..25 {
                let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-0.9..0.9)).collect();
                let t: f64 = rng.gen_range(0.0..4.0);
                let r = h.eval(&x, t, &opts).unwrap();
                let step = 1e-6;
                for i in 0..4 {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[i] += step;
                    xm[i] -= step;
                    let fd = (h.eval(&xp, t, &opts).unwrap().value
                        - h.eval(&xm, t, &opts).unwrap().value)
                        / (2.0 * step);
                    assert!(
                        (r.grad_x[i] - fd).abs() <= 1e-5 * (1.0 + r.grad_x[i].abs()),
                        "{f}: grad[{i}] = {} vs fd {}",
                        r.grad_x[i],
                        fd
                    );
                }
                let fd_t = (h.eval(&x, t + step, &opts).unwrap().value
                    - h.eval(&x, t - step, &opts).unwrap().value)
                    / (2.0 * step);
                assert!((r.d_dt - fd_t).abs() <= 1e-5 * (1.0 + r.d_dt.abs()));
            }
        }
    }

    #[test]
    fn soundness_nonnegative_barrier_implies_holds() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        let props = props();
        let formulas = [parse_formula("!O & C").unwrap(), parse_formula("B & !O & C").unwrap()];
        let guards = |lit: &Literal| {
            if lit.prop == "B" && lit.polarity == Polarity::Positive {
                Some(reach_b_guard())
            } else {
                None
            }
        };
        let opts = BarrierOpts::default();
        let mut hits = 0;
        for formula in &formulas {
            let h = formula_barrier(formula, &guards, &props, 10.0).unwrap();
            for _ in 0..2000 {
                // correlate the robots so the connectivity term can be large
                let r1: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let off: Vec<f64> = (0..2).map(|_| rng.gen_range(-0.2..0.2)).collect();
                let x = [r1[0], r1[1], r1[0] + off[0], r1[1] + off[1]];
                let t: f64 = rng.gen_range(0.0..2.0); // within every certify_until
                let r = h.eval(&x, t, &opts).unwrap();
                if r.value >= 0.0 {
                    hits += 1;
                    assert!(crate::formula::holds(formula, &x, &props).unwrap());
                }
            }
        }
        // the softmin is conservative, so nonnegative samples are not common,
        // but the test is vacuous without any
        assert!(hits > 0, "no nonnegative samples drawn");
    }
}
