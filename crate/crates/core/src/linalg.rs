//! Dense linear-algebra helpers shared by identification and control.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

const CHUNK_ROWS: usize = 1024;

/// Multi-output ridge least squares `min ‖X·W − Y‖² + ε‖W‖²_F`, accumulated
/// row by row and solved by a streaming Householder QR of `[X Y]`.
///
/// Only the triangular factor of the augmented matrix is kept, so memory is
/// independent of the number of samples.
#[derive(Debug, Clone)]
pub struct StreamingLeastSquares {
    n_in: usize,
    n_out: usize,
    r: Option<DMatrix<f64>>,
    pending: Vec<f64>,
    rows: usize,
}

impl StreamingLeastSquares {
    pub fn new(n_in: usize, n_out: usize) -> Self {
        StreamingLeastSquares {
            n_in,
            n_out,
            r: None,
            pending: Vec::with_capacity(CHUNK_ROWS * (n_in + n_out)),
            rows: 0,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn push(&mut self, x: &[f64], y: &[f64]) {
        debug_assert_eq!(x.len(), self.n_in);
        debug_assert_eq!(y.len(), self.n_out);
        self.pending.extend_from_slice(x);
        self.pending.extend_from_slice(y);
        self.rows += 1;
        if self.pending.len() >= CHUNK_ROWS * (self.n_in + self.n_out) {
            self.flush();
        }
    }

    fn flush(&mut self) {
        let cols = self.n_in + self.n_out;
        let new_rows = self.pending.len() / cols;
        if new_rows == 0 {
            return;
        }
        let chunk = DMatrix::from_row_slice(new_rows, cols, &self.pending);
        self.pending.clear();
        let stacked = match self.r.take() {
            Some(r) => {
                let mut s = DMatrix::zeros(r.nrows() + new_rows, cols);
                s.rows_mut(0, r.nrows()).copy_from(&r);
                s.rows_mut(r.nrows(), new_rows).copy_from(&chunk);
                s
            }
            None => chunk,
        };
        self.r = Some(stacked.qr().r());
    }

    /// Returns `W` (n_in × n_out).
    pub fn solve(mut self, ridge: f64) -> Result<DMatrix<f64>> {
        if !(ridge >= 0.0) {
            return Err(Error::Config(format!("ridge must be >= 0, got {ridge}")));
        }
        if ridge > 0.0 {
            let s = ridge.sqrt();
            let mut row = vec![0.0; self.n_in + self.n_out];
            for i in 0..self.n_in {
                row[i] = s;
                self.pending.extend_from_slice(&row);
                row[i] = 0.0;
            }
        }
        self.flush();
        let r = self.r.ok_or(Error::Singular { column: 0 })?;
        let n = self.n_in;
        if r.nrows() < n {
            return Err(Error::Singular { column: r.nrows() });
        }
        let rxx = r.view((0, 0), (n, n)).into_owned();
        let rxy = r.view((0, n), (n, self.n_out)).into_owned();
        let diag_max = (0..n).map(|i| rxx[(i, i)].abs()).fold(0.0, f64::max);
        let tol = diag_max * f64::EPSILON * (self.rows.max(n) as f64);
        if let Some(i) = (0..n).find(|&i| !(rxx[(i, i)].abs() > tol)) {
            return Err(Error::Singular { column: i });
        }
        rxx.solve_upper_triangular(&rxy)
            .ok_or(Error::Singular { column: 0 })
    }
}

/// `‖M‖_F`.
pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn diag(values: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_column_slice(values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matches_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (n, p, q) = (3000, 6, 2);
        let x = DMatrix::from_fn(n, p, |_, _| rng.random_range(-1.0..1.0));
        let y = DMatrix::from_fn(n, q, |_, _| rng.random_range(-1.0..1.0));
        let mut ls = StreamingLeastSquares::new(p, q);
        for i in 0..n {
            let xr: Vec<f64> = x.row(i).iter().copied().collect();
            let yr: Vec<f64> = y.row(i).iter().copied().collect();
            ls.push(&xr, &yr);
        }
        let w = ls.solve(0.5).unwrap();
        let gram = x.transpose() * &x + DMatrix::identity(p, p) * 0.5;
        let expected = gram.cholesky().unwrap().solve(&(x.transpose() * &y));
        assert!((w - expected).abs().max() < 1e-10);
    }

    #[test]
    fn rank_deficiency_is_reported() {
        let mut ls = StreamingLeastSquares::new(2, 1);
        for i in 0..50 {
            let v = i as f64;
            ls.push(&[v, 2.0 * v], &[v]);
        }
        assert!(matches!(ls.clone().solve(0.0), Err(Error::Singular { .. })));
        assert!(ls.solve(1e-6).is_ok());
    }
}
