//! Dense quadratic programming by a dual active-set method.
//!
//! Solves `min uᵀPu  s.t.  aᵢ·u + bᵢ ≥ 0` for strictly positive definite
//! `P`. The iteration starts at the unconstrained minimum and adds violated
//! constraints one at a time, keeping dual feasibility; a violated
//! constraint whose normal lies in the span of the active set with
//! non-positive multiplier sensitivities certifies primal infeasibility.
//! Problems here are tiny (a handful of variables and rows), so the KKT
//! systems are re-solved densely every iteration via Cholesky.

use thiserror::Error;

/// One affine inequality `a·u + b >= 0`.
#[derive(Debug, Clone)]
pub struct QpRow {
    pub a: Vec<f64>,
    pub b: f64,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub u: Vec<f64>,
    /// Lagrange multipliers, one per row (zero when inactive).
    pub multipliers: Vec<f64>,
    /// Indices of rows active at the solution.
    pub active: Vec<usize>,
    pub iterations: usize,
    /// Worst Karush-Kuhn-Tucker residual (stationarity, primal feasibility,
    /// complementarity) at the returned point.
    pub kkt_residual: f64,
}

#[derive(Debug, Clone, Error)]
pub enum QpError {
    #[error("cost matrix is not positive definite")]
    NotPsd,
    #[error("infeasible constraint system: row {violated} conflicts with active rows {active:?}")]
    Infeasible { violated: usize, active: Vec<usize> },
    #[error("iteration limit reached after {0} iterations")]
    IterationLimit(usize),
    #[error("dimension mismatch: P is {p}x{p} but row {row} has length {len}")]
    Dimension { p: usize, row: usize, len: usize },
}

const TOL_VIOLATION: f64 = 1e-10;
const TOL_DIRECTION: f64 = 1e-12;

/// Solve `min uᵀPu` subject to the rows. `p` is row-major `m`×`m`.
pub fn solve_qp(p: &[f64], m: usize, rows: &[QpRow]) -> Result<QpSolution, QpError> {
    assert_eq!(p.len(), m * m, "P must be m*m row-major");
    for (i, r) in rows.iter().enumerate() {
        if r.a.len() != m {
            return Err(QpError::Dimension { p: m, row: i, len: r.a.len() });
        }
    }
    // Q = 2P; work with its Cholesky factor throughout.
    let mut q: Vec<f64> = p.iter().map(|v| 2.0 * v).collect();
    let chol = Cholesky::new(&mut q, m).ok_or(QpError::NotPsd)?;

    let mut u = vec![0.0; m];
    let mut active: Vec<usize> = Vec::new();
    let mut lam: Vec<f64> = Vec::new();
    let cap = 10 * (m + rows.len()) + 10;
    let mut iterations = 0;

    'outer: loop {
        iterations += 1;
        if iterations > cap {
            return Err(QpError::IterationLimit(cap));
        }
        // most violated inactive row
        let mut pick: Option<(f64, usize)> = None;
        for (i, r) in rows.iter().enumerate() {
            if active.contains(&i) {
                continue;
            }
            let s = dot(&r.a, &u) + r.b;
            if s < -TOL_VIOLATION && pick.is_none_or(|(best, _)| s < best) {
                pick = Some((s, i));
            }
        }
        let (_, p_idx) = match pick {
            None => break 'outer,
            Some(v) => v,
        };
        let mut lam_p = 0.0;

        // drive row p_idx to feasibility, dropping blockers as needed
        loop {
            iterations += 1;
            if iterations > cap {
                return Err(QpError::IterationLimit(cap));
            }
            let ap = &rows[p_idx].a;
            let y = chol.solve(ap);
            let k = active.len();
            let (z, mu) = if k == 0 {
                (y.clone(), Vec::new())
            } else {
                // S mu = A_W y, with S = A_W Q^{-1} A_Wᵀ
                let cols: Vec<Vec<f64>> = active.iter().map(|&i| chol.solve(&rows[i].a)).collect();
                let mut s = vec![0.0; k * k];
                for i in 0..k {
                    for j in 0..k {
                        s[i * k + j] = dot(&rows[active[i]].a, &cols[j]);
                    }
                }
                match Cholesky::new(&mut s, k) {
                    Some(schol) => {
                        let rhs: Vec<f64> =
                            active.iter().map(|&i| dot(&rows[i].a, &y)).collect();
                        let mu = schol.solve(&rhs);
                        let mut z = y.clone();
                        for (j, col) in cols.iter().enumerate() {
                            for (zi, ci) in z.iter_mut().zip(col) {
                                *zi -= mu[j] * ci;
                            }
                        }
                        (z, mu)
                    }
                    None => {
                        // numerically dependent active normals: release the
                        // weakest one and retry
                        let j_min = lam
                            .iter()
                            .enumerate()
                            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                            .map(|(j, _)| j)
                            .unwrap();
                        active.remove(j_min);
                        lam.remove(j_min);
                        continue;
                    }
                }
            };

            let z_norm = z.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
            let slack = dot(ap, &u) + rows[p_idx].b;

            if z_norm <= TOL_DIRECTION {
                // a_p in span of active normals
                if mu.iter().all(|&r| r <= TOL_DIRECTION) {
                    return Err(QpError::Infeasible { violated: p_idx, active: active.clone() });
                }
                let (j_block, t1) = blocking_step(&lam, &mu);
                let t1 = t1.ok_or(QpError::Infeasible { violated: p_idx, active: active.clone() })?;
                for (l, r) in lam.iter_mut().zip(&mu) {
                    *l -= t1 * r;
                }
                lam_p += t1;
                active.remove(j_block);
                lam.remove(j_block);
                continue;
            }

            let denom = dot(ap, &z);
            let t2 = -slack / denom;
            let (j_block, t1) = blocking_step(&lam, &mu);
            let t = match t1 {
                Some(t1) if t1 < t2 => t1,
                _ => t2,
            };
            for (ui, zi) in u.iter_mut().zip(&z) {
                *ui += t * zi;
            }
            for (l, r) in lam.iter_mut().zip(&mu) {
                *l -= t * r;
            }
            lam_p += t;
            if t1.is_none_or(|t1| t2 <= t1) {
                active.push(p_idx);
                lam.push(lam_p);
                break;
            } else {
                active.remove(j_block);
                lam.remove(j_block);
            }
        }
    }

    // assemble full multiplier vector and the KKT residual
    let mut multipliers = vec![0.0; rows.len()];
    for (&i, &l) in active.iter().zip(&lam) {
        multipliers[i] = l;
    }
    let mut residual = 0.0f64;
    for j in 0..m {
        // stationarity: 2 P u - sum lam_i a_i = 0
        let mut s = 0.0;
        for l in 0..m {
            s += 2.0 * p[j * m + l] * u[l];
        }
        for (i, r) in rows.iter().enumerate() {
            s -= multipliers[i] * r.a[j];
        }
        residual = residual.max(s.abs());
    }
    for (i, r) in rows.iter().enumerate() {
        let s = dot(&r.a, &u) + r.b;
        residual = residual.max((-s).max(0.0)); // primal feasibility
        residual = residual.max((multipliers[i] * s).abs()); // complementarity
        residual = residual.max((-multipliers[i]).max(0.0)); // dual feasibility
    }
    Ok(QpSolution { u, multipliers, active, iterations, kkt_residual: residual })
}

/// Smallest ratio `lam_i / mu_i` over positive sensitivities.
fn blocking_step(lam: &[f64], mu: &[f64]) -> (usize, Option<f64>) {
    let mut best: Option<(f64, usize)> = None;
    for (i, (&l, &r)) in lam.iter().zip(mu).enumerate() {
        if r > TOL_DIRECTION {
            let ratio = l / r;
            if best.is_none_or(|(b, _)| ratio < b) {
                best = Some((ratio, i));
            }
        }
    }
    match best {
        Some((t, i)) => (i, Some(t)),
        None => (0, None),
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
struct Cholesky {
    l: Vec<f64>,
    n: usize,
}

impl Cholesky {
    fn new(a: &mut [f64], n: usize) -> Option<Self> {
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut s = a[i * n + j];
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                if i == j {
                    if s <= 0.0 {
                        return None;
                    }
                    l[i * n + i] = s.sqrt();
                } else {
                    l[i * n + j] = s / l[j * n + j];
                }
            }
        }
        Some(Cholesky { l, n })
    }

    /// Solve `A x = b` via the factor.
    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x = b.to_vec();
        for i in 0..n {
            for k in 0..i {
                x[i] -= self.l[i * n + k] * x[k];
            }
            x[i] /= self.l[i * n + i];
        }
        for i in (0..n).rev() {
            for k in i + 1..n {
                x[i] -= self.l[k * n + i] * x[k];
            }
            x[i] /= self.l[i * n + i];
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn identity(m: usize) -> Vec<f64> {
        let mut p = vec![0.0; m * m];
        for i in 0..m {
            p[i * m + i] = 1.0;
        }
        p
    }

    #[test]
    fn unconstrained_minimum_is_zero() {
        let sol = solve_qp(&identity(3), 3, &[]).unwrap();
        assert_eq!(sol.u, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn projection_onto_halfspace() {
        // u1 >= 2
        let rows = vec![QpRow { a: vec![1.0, 0.0], b: -2.0 }];
        let sol = solve_qp(&identity(2), 2, &rows).unwrap();
        assert_abs_diff_eq!(sol.u[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sol.u[1], 0.0, epsilon = 1e-12);
        assert!(sol.kkt_residual <= 1e-8);
    }

    #[test]
    fn contradictory_halfspaces_infeasible() {
        let rows = vec![
            QpRow { a: vec![1.0], b: -1.0 },  // u >= 1
            QpRow { a: vec![-1.0], b: 0.0 },  // u <= 0
        ];
        match solve_qp(&identity(1), 1, &rows) {
            Err(QpError::Infeasible { .. }) => {}
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn non_pd_cost_rejected() {
        let p = vec![0.0, 0.0, 0.0, 0.0];
        assert!(matches!(solve_qp(&p, 2, &[]), Err(QpError::NotPsd)));
    }

    #[test]
    fn two_active_constraints() {
        // u1 >= 1, u2 >= 1 with P = I: optimum (1, 1)
        let rows = vec![
            QpRow { a: vec![1.0, 0.0], b: -1.0 },
            QpRow { a: vec![0.0, 1.0], b: -1.0 },
        ];
        let sol = solve_qp(&identity(2), 2, &rows).unwrap();
        assert_abs_diff_eq!(sol.u[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sol.u[1], 1.0, epsilon = 1e-12);
        assert_eq!(sol.active.len(), 2);
    }

    #[test]
    fn redundant_constraint_stays_inactive() {
        let rows = vec![
            QpRow { a: vec![1.0, 0.0], b: -1.0 }, // u1 >= 1 (binds)
            QpRow { a: vec![1.0, 0.0], b: 5.0 },  // u1 >= -5 (slack)
        ];
        let sol = solve_qp(&identity(2), 2, &rows).unwrap();
        assert_abs_diff_eq!(sol.u[0], 1.0, epsilon = 1e-12);
        assert_eq!(sol.multipliers[1], 0.0);
    }

    #[test]
    fn anisotropic_cost() {
        // P = diag(1, 4), constraint u1 + u2 >= 2.
        // KKT: 2u1 = l, 8u2 = l, u1+u2 = 2 -> u1 = 4u2 -> u2 = 0.4, u1 = 1.6
        let p = vec![1.0, 0.0, 0.0, 4.0];
        let rows = vec![QpRow { a: vec![1.0, 1.0], b: -2.0 }];
        let sol = solve_qp(&p, 2, &rows).unwrap();
        assert_abs_diff_eq!(sol.u[0], 1.6, epsilon = 1e-10);
        assert_abs_diff_eq!(sol.u[1], 0.4, epsilon = 1e-10);
    }

    #[test]
    fn box_plus_demand_infeasible() {
        // u >= 3 but |u| <= 1
        let rows = vec![
            QpRow { a: vec![1.0], b: -3.0 },
            QpRow { a: vec![1.0], b: 1.0 },
            QpRow { a: vec![-1.0], b: 1.0 },
        ];
        assert!(matches!(solve_qp(&identity(1), 1, &rows), Err(QpError::Infeasible { .. })));
    }

    #[test]
    fn drops_blocking_constraint() {
        // First activates u1 >= 1; then u1 + u2 >= 3 forces a drop/re-add
        // sequence ending with both tight or only the second active.
        let rows = vec![
            QpRow { a: vec![1.0, 0.0], b: -1.0 },
            QpRow { a: vec![1.0, 1.0], b: -3.0 },
        ];
        let sol = solve_qp(&identity(2), 2, &rows).unwrap();
        for r in &rows {
            assert!(dot(&r.a, &sol.u) + r.b >= -1e-9);
        }
        assert!(sol.kkt_residual <= 1e-8, "kkt residual {}", sol.kkt_residual);
    }

    #[test]
    fn random_qps_satisfy_kkt_and_beat_feasible_points() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for case in 0..200 {
            let m = rng.gen_range(1..=6);
            // PD cost: D + small symmetric perturbation
            let mut p = vec![0.0; m * m];
            for i in 0..m {
                p[i * m + i] = rng.gen_range(0.5..3.0);
            }
            for i in 0..m {
                for j in 0..i {
                    let v = rng.gen_range(-0.2..0.2);
                    p[i * m + j] += v;
                    p[j * m + i] += v;
                }
            }
            // rows guaranteed feasible at u*
            let ustar: Vec<f64> = (0..m).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let nrows = rng.gen_range(0..=10);
            let rows: Vec<QpRow> = (0..nrows)
                .map(|_| {
                    let a: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    let slack = rng.gen_range(0.0..1.0);
                    let b = slack - dot(&a, &ustar);
                    QpRow { a, b }
                })
                .collect();
            let sol = solve_qp(&p, m, &rows).unwrap();
            assert!(sol.kkt_residual <= 1e-8, "case {case}: kkt {}", sol.kkt_residual);
            let obj = |u: &[f64]| {
                let mut s = 0.0;
                for i in 0..m {
                    for j in 0..m {
                        s += u[i] * p[i * m + j] * u[j];
                    }
                }
                s
            };
            let fopt = obj(&sol.u);
            // random feasible points by rejection around u*
            let mut checked = 0;
            let mut attempts = 0;
            while checked < 100 && attempts < 5000 {
                attempts += 1;
                let v: Vec<f64> = (0..m)
                    .map(|i| ustar[i] + rng.gen_range(-1.0..1.0))
                    .collect();
                if rows.iter().all(|r| dot(&r.a, &v) + r.b >= 0.0) {
                    checked += 1;
                    assert!(
                        fopt <= obj(&v) + 1e-9,
                        "case {case}: {fopt} > {}",
                        obj(&v)
                    );
                }
            }
            assert!(checked > 0 || nrows > 0, "sampling failed");
        }
    }

    #[test]
    fn deterministic_resolves() {
        let p = identity(3);
        let rows = vec![
            QpRow { a: vec![1.0, 0.3, -0.2], b: -1.5 },
            QpRow { a: vec![-0.4, 1.0, 0.1], b: -0.7 },
            QpRow { a: vec![0.2, -0.6, 1.0], b: 0.3 },
        ];
        let a = solve_qp(&p, 3, &rows).unwrap();
        let b = solve_qp(&p, 3, &rows).unwrap();
        assert_eq!(a.u, b.u);
        assert!(a.u.iter().zip(&b.u).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
