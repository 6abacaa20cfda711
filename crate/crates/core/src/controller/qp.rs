//! Dense strictly convex QP by the Goldfarb–Idnani dual active-set method.
//!
//! Solves `min ½ xᵀHx + fᵀx  s.t.  Cx ≥ b`. The problems here are tiny (one
//! variable per load node, a few hundred inequality rows), so the active-set
//! projections are formed explicitly instead of through updated
//! factorizations.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

const FEAS_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Indices of the constraints active at the solution.
    pub active: Vec<usize>,
    /// Lagrange multipliers of the active constraints.
    pub multipliers: Vec<f64>,
    pub iterations: usize,
}

/// Returns [`Error::Infeasible`] when the dual step is unbounded.
pub fn solve_qp(
    h: &DMatrix<f64>,
    f: &DVector<f64>,
    c: &DMatrix<f64>,
    b: &DVector<f64>,
) -> Result<QpSolution> {
    let n = h.nrows();
    if h.ncols() != n || f.len() != n || c.ncols() != n || c.nrows() != b.len() {
        return Err(Error::Dimension(format!(
            "qp: H {}x{}, f {}, C {}x{}, b {}",
            h.nrows(),
            h.ncols(),
            f.len(),
            c.nrows(),
            c.ncols(),
            b.len()
        )));
    }
    let h_inv = h
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Config("qp: Hessian is not positive definite".into()))?
        .inverse();
    let scale: Vec<f64> = (0..c.nrows()).map(|i| c.row(i).norm().max(1.0)).collect();
    let slack = |x: &DVector<f64>, i: usize| (c.row(i) * x)[0] - b[i];

    let mut x = -(&h_inv * f);
    let mut active: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let max_iter = 50 * (n + c.nrows()) + 100;
    let mut iterations = 0;

    loop {
        // Most violated constraint, relative to its row norm.
        let mut p = None;
        let mut worst = -FEAS_TOL;
        for i in 0..c.nrows() {
            if active.contains(&i) {
                continue;
            }
            let s = slack(&x, i) / scale[i];
            if s < worst {
                worst = s;
                p = Some(i);
            }
        }
        let Some(p) = p else {
            return Ok(QpSolution {
                x,
                active,
                multipliers: u,
                iterations,
            });
        };
        let np = c.row(p).transpose();
        let mut u_plus = 0.0;
        loop {
            iterations += 1;
            if iterations > max_iter {
                return Err(Error::Config(
                    "qp: active-set iteration limit reached".into(),
                ));
            }
            let (z, r) = directions(&h_inv, c, &active, &np)?;
            // Partial step: largest dual step keeping active multipliers ≥ 0.
            let mut t1 = f64::INFINITY;
            let mut drop = None;
            for (j, &rj) in r.iter().enumerate() {
                if rj > 0.0 {
                    let t = u[j] / rj;
                    if t < t1 {
                        t1 = t;
                        drop = Some(j);
                    }
                }
            }
            let zn = z.dot(&np);
            let t2 = if z.norm() > 1e-14 * (1.0 + np.norm()) && zn > 0.0 {
                -slack(&x, p) / zn
            } else {
                f64::INFINITY
            };
            let t = t1.min(t2);
            if !t.is_finite() {
                return Err(Error::Infeasible);
            }
            for (uj, rj) in u.iter_mut().zip(&r) {
                *uj -= t * rj;
            }
            u_plus += t;
            if t2.is_finite() {
                x.axpy(t, &z, 1.0);
            }
            if t2 <= t1 {
                active.push(p);
                u.push(u_plus);
                break;
            }
            let j = drop.expect("partial step has a blocking constraint");
            active.remove(j);
            u.remove(j);
        }
    }
}

/// Primal step `z = H⁻¹(I − N N*) n⁺` and dual step `r = N* n⁺` with
/// `N* = (NᵀH⁻¹N)⁻¹NᵀH⁻¹` for the active normals `N`.
fn directions(
    h_inv: &DMatrix<f64>,
    c: &DMatrix<f64>,
    active: &[usize],
    np: &DVector<f64>,
) -> Result<(DVector<f64>, Vec<f64>)> {
    let n = h_inv.nrows();
    if active.is_empty() {
        return Ok((h_inv * np, Vec::new()));
    }
    let mut nm = DMatrix::zeros(n, active.len());
    for (j, &i) in active.iter().enumerate() {
        nm.set_column(j, &c.row(i).transpose());
    }
    let hn = h_inv * &nm;
    let gram = nm.transpose() * &hn;
    let gram_inv = gram
        .try_inverse()
        .ok_or_else(|| Error::Config("qp: dependent active constraints".into()))?;
    let r = &gram_inv * (hn.transpose() * np);
    let z = h_inv * np - &hn * &r;
    Ok((z, r.iter().copied().collect()))
}
