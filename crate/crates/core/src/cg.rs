//! Jacobi-preconditioned conjugate gradient for symmetric positive definite
//! systems with several right-hand sides.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CgConfig {
    /// Stop a column once `||r|| <= tol * ||b||`.
    pub tol: f64,
    /// Iteration cap is `max_iter_factor * n`.
    pub max_iter_factor: usize,
}

impl Default for CgConfig {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter_factor: 10 }
    }
}

/// Solve `M X = B` column by column (all columns advanced together so the
/// matrix products are blocked). Returns the solution and the iteration count.
pub fn pcg_block(m: &DMatrix<f64>, b: &DMatrix<f64>, cfg: &CgConfig) -> Result<(DMatrix<f64>, usize)> {
    let n = m.nrows();
    assert_eq!(m.ncols(), n);
    assert_eq!(b.nrows(), n);
    let k = b.ncols();
    let max_iter = cfg.max_iter_factor.max(1) * n.max(1);

    let mut inv_diag = Vec::with_capacity(n);
    for i in 0..n {
        let v = m[(i, i)];
        if !(v > 0.0) {
            return Err(Error::NotPositiveDefinite("nonpositive diagonal in CG operator"));
        }
        inv_diag.push(1.0 / v);
    }

    let mut x = DMatrix::zeros(n, k);
    let mut r = b.clone();
    let mut z = r.clone();
    for mut row_col in z.column_iter_mut() {
        for (v, s) in row_col.iter_mut().zip(&inv_diag) {
            *v *= s;
        }
    }
    let mut p = z.clone();
    let mut rz: Vec<f64> = (0..k).map(|j| r.column(j).dot(&z.column(j))).collect();
    let target: Vec<f64> = (0..k).map(|j| cfg.tol * b.column(j).norm()).collect();
    let mut active: Vec<bool> = (0..k).map(|j| r.column(j).norm() > target[j]).collect();

    let mut iter = 0;
    while active.iter().any(|&a| a) {
        if iter >= max_iter {
            let worst = (0..k)
                .filter(|&j| active[j])
                .map(|j| r.column(j).norm() / b.column(j).norm().max(f64::MIN_POSITIVE))
                .fold(0.0, f64::max);
            return Err(Error::CgNotConverged { iterations: iter, residual: worst });
        }
        iter += 1;
        let q = m * &p;
        for j in 0..k {
            if !active[j] {
                continue;
            }
            let pq = p.column(j).dot(&q.column(j));
            if !(pq > 0.0) {
                return Err(Error::NotPositiveDefinite("CG curvature p'Mp <= 0"));
            }
            let alpha = rz[j] / pq;
            x.column_mut(j).axpy(alpha, &p.column(j), 1.0);
            r.column_mut(j).axpy(-alpha, &q.column(j), 1.0);
            if r.column(j).norm() <= target[j] {
                active[j] = false;
                continue;
            }
            for i in 0..n {
                z[(i, j)] = r[(i, j)] * inv_diag[i];
            }
            let rz_new = r.column(j).dot(&z.column(j));
            let beta = rz_new / rz[j];
            rz[j] = rz_new;
            for i in 0..n {
                p[(i, j)] = z[(i, j)] + beta * p[(i, j)];
            }
        }
    }
    Ok((x, iter))
}
