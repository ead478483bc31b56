//! Dense symmetric eigenvalue helpers.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Largest matrix dimension handled by a full symmetric eigensolve in
/// [`lambda_max`]; bigger matrices go through [`power_iteration`].
pub const DENSE_EIGEN_MAX_DIM: usize = 64;

pub const POWER_TOL: f64 = 1e-10;
pub const POWER_MAX_ITER: usize = 10_000;

/// All eigenvalues of a symmetric matrix, ascending.
pub fn symmetric_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    let mut values: Vec<f64> = SymmetricEigen::new(a.clone())
        .eigenvalues
        .iter()
        .copied()
        .collect();
    values.sort_by(|x, y| x.total_cmp(y));
    values
}

/// Largest eigenvalue of a symmetric positive semidefinite matrix.
pub fn lambda_max(a: &DMatrix<f64>) -> Result<f64> {
    if a.nrows() == 0 {
        return Ok(0.0);
    }
    if a.nrows() <= DENSE_EIGEN_MAX_DIM {
        Ok(*symmetric_eigenvalues(a).last().unwrap())
    } else {
        power_iteration(a, POWER_TOL, POWER_MAX_ITER)
    }
}

/// Dominant eigenvalue of a PSD matrix by power iteration.
///
/// Stops when the Rayleigh quotient changes by less than `tol` relative.
pub fn power_iteration(a: &DMatrix<f64>, tol: f64, max_iter: usize) -> Result<f64> {
    let n = a.nrows();
    if n == 0 || a.iter().all(|v| *v == 0.0) {
        return Ok(0.0);
    }
    // Non-symmetric start vector avoids being orthogonal to the top eigenvector
    // for structured inputs.
    let mut v = DVector::from_fn(n, |i, _| 1.0 + (i as f64 + 1.0).sqrt().fract());
    v.normalize_mut();
    let mut estimate = 0.0;
    for _ in 0..max_iter {
        let w = a * &v;
        let next = v.dot(&w);
        let norm = w.norm();
        if norm == 0.0 {
            return Ok(0.0);
        }
        v = w / norm;
        if (next - estimate).abs() <= tol * next.abs().max(f64::MIN_POSITIVE) {
            return Ok(next);
        }
        estimate = next;
    }
    Err(Error::NonConvergence {
        iterations: max_iter,
    })
}

/// `‖A − Aᵀ‖_F`.
pub fn asymmetry(a: &DMatrix<f64>) -> f64 {
    (a - a.transpose()).norm()
}
