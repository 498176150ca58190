//! Dense helpers shared by the algorithm modules.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::rng;

/// Largest dimension for which spectral norms use a full SVD.
pub const DENSE_SVD_CAP: usize = 256;
pub const POWER_ITERATION_TOL: f64 = 1e-10;
pub const POWER_ITERATION_MAX: usize = 10_000;

pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.norm()
}

/// Spectral norm ‖A‖₂.
///
/// Full SVD up to [`DENSE_SVD_CAP`], power iteration on AᵀA beyond it.
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    if a.nrows().max(a.ncols()) <= DENSE_SVD_CAP {
        return a.singular_values().iter().fold(0.0_f64, |acc, &s| acc.max(s));
    }
    match power_iteration_norm(a) {
        Ok(v) => v,
        Err(_) => a.singular_values().iter().fold(0.0_f64, |acc, &s| acc.max(s)),
    }
}

pub fn power_iteration_norm(a: &DMatrix<f64>) -> Result<f64> {
    let mut v = rng::gaussian_vector(&mut rng::seeded(0x5EED), a.ncols());
    let norm = v.norm();
    if norm == 0.0 {
        return Ok(0.0);
    }
    v /= norm;
    let mut estimate = 0.0;
    for _ in 0..POWER_ITERATION_MAX {
        let w = a.tr_mul(&(a * &v));
        let lambda = w.norm();
        if lambda == 0.0 {
            return Ok(0.0);
        }
        v = w / lambda;
        if (lambda - estimate).abs() <= POWER_ITERATION_TOL * lambda {
            return Ok(lambda.sqrt());
        }
        estimate = lambda;
    }
    Err(Error::NonConvergence(format!(
        "power iteration did not reach tolerance {POWER_ITERATION_TOL} in {POWER_ITERATION_MAX} steps"
    )))
}

/// Right singular vector of the largest singular value.
pub fn top_right_singular_vector(a: &DMatrix<f64>) -> DVector<f64> {
    let svd = a.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested v_t");
    let (idx, _) =
        svd.singular_values.iter().enumerate().fold(
            (0, f64::NEG_INFINITY),
            |best, (i, &s)| {
                if s > best.1 {
                    (i, s)
                } else {
                    best
                }
            },
        );
    v_t.row(idx).transpose()
}

pub fn is_symmetric(m: &DMatrix<f64>, rel_tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = m.norm().max(f64::MIN_POSITIVE);
    (m - m.transpose()).norm() <= rel_tol * scale
}

/// Block-diagonal matrix from square blocks.
pub fn block_diagonal(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let n: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(n, n);
    let mut offset = 0;
    for b in blocks {
        let k = b.nrows();
        out.view_mut((offset, offset), (k, k)).copy_from(b);
        offset += k;
    }
    out
}
