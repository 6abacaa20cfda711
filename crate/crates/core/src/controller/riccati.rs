use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::koopman::KoopmanModel;
use crate::linalg::frobenius;
use crate::{Error, Result};

pub const MAX_ITERATIONS: usize = 100_000;
/// Acceptance bound on the Riccati residual, relative to `1 + ‖P‖`.
pub const RESIDUAL_TOL: f64 = 1e-10;

pub const DEFAULT_Q_OMEGA: f64 = 10.0;
pub const DEFAULT_Q_REST: f64 = 1e-7;
pub const DEFAULT_R: f64 = 1.0;
pub const DEFAULT_DISCOUNT: f64 = 0.99;

/// Diagonal LQR weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LqrWeights {
    pub q2: Vec<f64>,
    pub r2: Vec<f64>,
    /// Per-step discount γ of the quadratic cost; 1 is the undiscounted
    /// problem. A fitted model carries the persistent post-disturbance offset
    /// as an eigenvalue at or slightly above 1 that no DC input can move, so
    /// the undiscounted problem has no stabilizing solution on it.
    #[serde(default = "one")]
    pub discount: f64,
}

fn one() -> f64 {
    1.0
}

impl LqrWeights {
    /// Weight `q_omega` on the ω coordinates of the lifted state (current
    /// and delayed), `q_rest` on every other observable, `r` per link.
    pub fn for_model(model: &KoopmanModel, q_omega: f64, q_rest: f64, r: f64) -> Self {
        let omega_coords = 1 + model.config.dictionary.uses_delays() as usize * model.config.lags();
        LqrWeights {
            q2: (0..model.dim())
                .map(|i| if i < omega_coords { q_omega } else { q_rest })
                .collect(),
            r2: vec![r; model.n_links()],
            discount: 1.0,
        }
    }

    /// Default weights: ω regulation dominates, discount [`DEFAULT_DISCOUNT`].
    pub fn default_for_model(model: &KoopmanModel) -> Self {
        LqrWeights {
            discount: DEFAULT_DISCOUNT,
            ..Self::for_model(model, DEFAULT_Q_OMEGA, DEFAULT_Q_REST, DEFAULT_R)
        }
    }

    pub fn validate(&self, dim: usize, n_links: usize) -> Result<()> {
        if self.q2.len() != dim || self.r2.len() != n_links {
            return Err(Error::Dimension(format!(
                "weights have {} state / {} input entries, model has {dim} / {n_links}",
                self.q2.len(),
                self.r2.len()
            )));
        }
        if self.q2.iter().any(|q| !(*q >= 0.0)) || self.r2.iter().any(|r| !(*r > 0.0)) {
            return Err(Error::Config(
                "need Q2 >= 0 and R2 > 0 on the diagonal".into(),
            ));
        }
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return Err(Error::Config("discount must be in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    pub p: DMatrix<f64>,
    /// `K = (R2 + BᵀPB)⁻¹BᵀPA`; the optimal feedback is `u = −K g`.
    pub k: DMatrix<f64>,
    /// Frobenius norm of the Riccati residual at `p`.
    pub residual: f64,
    pub iterations: usize,
}

/// One Riccati map `Q + AᵀPA − AᵀPB(R + BᵀPB)⁻¹BᵀPA`, with the gain.
fn riccati_map(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let pa = p * a;
    let pb = p * b;
    let s = r + b.transpose() * &pb;
    let k = s
        .cholesky()
        .ok_or_else(|| Error::Config("R2 + BᵀPB is not positive definite".into()))?
        .solve(&(b.transpose() * &pa));
    let mut next = q + a.transpose() * &pa - (a.transpose() * &pb) * &k;
    next = (&next + next.transpose()) * 0.5;
    Ok((next, k))
}

/// `‖Q + AᵀPA − AᵀPB(R + BᵀPB)⁻¹BᵀPA − P‖_F`, with `A, B` scaled by √γ.
pub fn dare_residual(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    weights: &LqrWeights,
    p: &DMatrix<f64>,
) -> Result<f64> {
    let (q, r) = weight_matrices(weights);
    let s = weights.discount.sqrt();
    let (a, b) = (&(a * s), &(b * s));
    let (next, _) = riccati_map(a, b, &q, &r, p)?;
    Ok(frobenius(&(next - p)))
}

fn weight_matrices(w: &LqrWeights) -> (DMatrix<f64>, DMatrix<f64>) {
    (
        DMatrix::from_diagonal(&DVector::from_column_slice(&w.q2)),
        DMatrix::from_diagonal(&DVector::from_column_slice(&w.r2)),
    )
}

/// Solves the discrete algebraic Riccati equation by fixed-point iteration
/// from `P = Q2`. A discount γ < 1 solves it for `(√γ A, √γ B)`, whose
/// gain is the optimal discounted feedback for `(A, B)`.
pub fn solve_dare(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    weights: &LqrWeights,
) -> Result<RiccatiSolution> {
    weights.validate(a.nrows(), b.ncols())?;
    if weights.discount < 1.0 {
        let s = weights.discount.sqrt();
        return solve_dare_undiscounted(&(a * s), &(b * s), weights);
    }
    solve_dare_undiscounted(a, b, weights)
}

fn solve_dare_undiscounted(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    weights: &LqrWeights,
) -> Result<RiccatiSolution> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n {
        return Err(Error::Dimension(format!(
            "A is {}x{}, B has {} rows",
            a.nrows(),
            a.ncols(),
            b.nrows()
        )));
    }
    weights.validate(n, b.ncols())?;
    let (q, r) = weight_matrices(weights);
    let mut p = q.clone();
    let mut best = f64::INFINITY;
    let mut since_best = 0;
    let mut iterations = 0;
    for it in 1..=MAX_ITERATIONS {
        iterations = it;
        // R2 > 0 keeps the map well defined; failure here means P blew up.
        let Ok((next, _)) = riccati_map(a, b, &q, &r, &p) else {
            break;
        };
        let step = frobenius(&(&next - &p));
        p = next;
        if !(step.is_finite() && frobenius(&p) < 1e150) {
            break;
        }
        let scale = 1.0 + frobenius(&p);
        // Iterate well past the acceptance bound while it still improves.
        if step <= 1e-3 * RESIDUAL_TOL * scale {
            return finish(a, b, &q, &r, p, it);
        }
        if step < best {
            best = step;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > 200 && step <= RESIDUAL_TOL * scale {
                return finish(a, b, &q, &r, p, it);
            }
        }
    }
    let residual = riccati_map(a, b, &q, &r, &p)
        .map(|(next, _)| frobenius(&(next - &p)))
        .unwrap_or(f64::NAN);
    Err(Error::Stabilizability {
        iterations,
        residual,
    })
}

fn finish(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p: DMatrix<f64>,
    iterations: usize,
) -> Result<RiccatiSolution> {
    let (next, k) = riccati_map(a, b, q, r, &p)?;
    let residual = frobenius(&(next - &p));
    if residual > RESIDUAL_TOL * (1.0 + frobenius(&p)) {
        return Err(Error::Stabilizability {
            iterations,
            residual,
        });
    }
    Ok(RiccatiSolution {
        p,
        k,
        residual,
        iterations,
    })
}

/// DARE on the DC input channel of a lifted model.
pub fn solve_dare_model(model: &KoopmanModel, weights: &LqrWeights) -> Result<RiccatiSolution> {
    solve_dare(&model.a, &model.b_d, weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn scalar_dare() {
        let w = LqrWeights {
            q2: vec![1.0],
            r2: vec![1.0],
            discount: 1.0,
        };
        let sol = solve_dare(&scalar(0.5), &scalar(1.0), &w).unwrap();
        let expected = (0.25 + 4.0625f64.sqrt()) / 2.0;
        assert!((sol.p[(0, 0)] - expected).abs() < 1e-9, "{}", sol.p[(0, 0)]);
        assert!((sol.p[(0, 0)] - 1.132782).abs() < 1e-6);
        assert!(sol.residual < 1e-10);
    }

    #[test]
    fn control_free_limit_is_lyapunov_sum() {
        let a = DMatrix::from_row_slice(2, 2, &[0.6, 0.2, -0.1, 0.5]);
        let b = DMatrix::zeros(2, 1);
        let w = LqrWeights {
            q2: vec![1.0, 2.0],
            r2: vec![1.0],
            discount: 1.0,
        };
        let sol = solve_dare(&a, &b, &w).unwrap();
        let q = DMatrix::from_diagonal(&DVector::from_vec(w.q2.clone()));
        let mut sum = DMatrix::zeros(2, 2);
        let mut ak = DMatrix::identity(2, 2);
        for _ in 0..400 {
            sum += ak.transpose() * &q * &ak;
            ak = &a * ak;
        }
        assert!(frobenius(&(sol.p - sum)) < 1e-9);
        assert!(sol.k.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn random_matrix_cases_meet_residual_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [2, 5, 10, 20] {
            let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0) / (n as f64).sqrt());
            let b = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0));
            let w = LqrWeights {
                q2: (0..n).map(|_| rng.random_range(0.1..2.0)).collect(),
                r2: vec![0.5, 1.5],
                discount: 1.0,
            };
            let sol = solve_dare(&a, &b, &w).unwrap();
            assert!(sol.residual < 1e-10, "n = {n}: {}", sol.residual);
            assert!(frobenius(&(&sol.p - sol.p.transpose())) < 1e-12);
            assert!(sol
                .p
                .clone()
                .symmetric_eigenvalues()
                .iter()
                .all(|&e| e > -1e-9));
        }
    }

    #[test]
    fn uncontrollable_unstable_mode_is_reported() {
        let a = DMatrix::from_row_slice(2, 2, &[1.2, 0.0, 0.0, 0.5]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let w = LqrWeights {
            q2: vec![1.0, 1.0],
            r2: vec![1.0],
            discount: 1.0,
        };
        assert!(matches!(
            solve_dare(&a, &b, &w),
            Err(Error::Stabilizability { .. })
        ));
    }

    #[test]
    fn discount_handles_an_uncontrollable_unit_mode() {
        // A persistent offset state (eigenvalue 1) feeding ω, not reachable by u.
        let a = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.0, 1.0]);
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        let mut w = LqrWeights {
            q2: vec![1.0, 0.0],
            r2: vec![1.0],
            discount: 1.0,
        };
        assert!(solve_dare(&a, &b, &w).is_err());
        w.discount = 0.98;
        let sol = solve_dare(&a, &b, &w).unwrap();
        assert!(dare_residual(&a, &b, &w, &sol.p).unwrap() < 1e-10 * (1.0 + frobenius(&sol.p)));
        // The gain on the controllable state is the scalar discounted LQR gain.
        let (ga, gb) = (0.9 * 0.98f64.sqrt(), 0.98f64.sqrt());
        // b²p² + (1 − b² − a²)p − 1 = 0 for q = r = 1.
        let c = 1.0 - gb * gb - ga * ga;
        let p = (-c + (c * c + 4.0 * gb * gb).sqrt()) / (2.0 * gb * gb);
        assert!((sol.p[(0, 0)] - p).abs() < 1e-8);
        assert!((sol.k[(0, 0)] - gb * p * ga / (1.0 + gb * gb * p)).abs() < 1e-8);
    }

    /// Infinite-horizon cost of `u = −K g` from `g0`, by simulation.
    fn closed_loop_cost(
        a: &DMatrix<f64>,
        b: &DMatrix<f64>,
        w: &LqrWeights,
        k: &DMatrix<f64>,
        g0: &DVector<f64>,
    ) -> f64 {
        let mut g = g0.clone();
        let mut cost = 0.0;
        for _ in 0..2000 {
            let u = -(k * &g);
            cost += g.iter().zip(&w.q2).map(|(x, q)| q * x * x).sum::<f64>()
                + u.iter().zip(&w.r2).map(|(x, r)| r * x * x).sum::<f64>();
            g = a * &g + b * u;
            if !g.norm().is_finite() || g.norm() > 1e12 {
                return f64::INFINITY;
            }
        }
        cost
    }

    #[test]
    fn riccati_gain_beats_random_stabilizing_gains() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = DMatrix::from_row_slice(3, 3, &[1.02, 0.1, 0.0, 0.0, 0.9, 0.2, 0.05, 0.0, 0.7]);
        let b = DMatrix::from_row_slice(3, 1, &[0.5, 0.1, 0.3]);
        let w = LqrWeights {
            q2: vec![4.0, 1.0, 0.5],
            r2: vec![1.0],
            discount: 1.0,
        };
        let sol = solve_dare(&a, &b, &w).unwrap();
        let g0 = DVector::from_vec(vec![1.0, -0.5, 0.3]);
        let best = closed_loop_cost(&a, &b, &w, &sol.k, &g0);
        assert!((best - (g0.transpose() * &sol.p * &g0)[0]).abs() < 1e-8 * best);
        let mut tried = 0;
        while tried < 50 {
            let k = &sol.k + DMatrix::from_fn(1, 3, |_, _| rng.random_range(-0.5..0.5));
            let rho = (&a - &b * &k)
                .complex_eigenvalues()
                .iter()
                .map(|e| e.norm())
                .fold(0.0, f64::max);
            if rho >= 1.0 {
                continue;
            }
            tried += 1;
            assert!(closed_loop_cost(&a, &b, &w, &k, &g0) >= best - 1e-9);
        }
    }
}
