//! Dense symmetric helpers and a generic power iteration.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::stream_rng;
use crate::error::{Error, Result};
use crate::tensor::dot;

pub type Matrix = DMatrix<f64>;

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn symmetric_eigenvalues(m: &Matrix) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Largest eigenvalue `λ1` of a symmetric matrix.
pub fn lambda1(m: &Matrix) -> f64 {
    *symmetric_eigenvalues(m).last().expect("non-empty matrix")
}

pub fn lambda_min(m: &Matrix) -> f64 {
    symmetric_eigenvalues(m)[0]
}

/// Eigenvalue of largest magnitude, keeping its sign.
pub fn dominant_eigenvalue(m: &Matrix) -> f64 {
    let ev = symmetric_eigenvalues(m);
    let (lo, hi) = (ev[0], ev[ev.len() - 1]);
    if lo.abs() > hi.abs() {
        lo
    } else {
        hi
    }
}

pub fn max_abs_entry(m: &Matrix) -> f64 {
    m.iter().fold(0.0, |acc: f64, v| acc.max(v.abs()))
}

pub fn symmetry_defect(m: &Matrix) -> f64 {
    max_abs_entry(&(m - m.transpose()))
}

/// Outcome of a power iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SharpnessEstimate {
    /// Final signed Rayleigh quotient.
    pub lambda_max: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `|λ_k − λ_{k−1}| / max(1, |λ_k|)` at exit.
    pub residual: f64,
}

/// Power iteration on a symmetric operator.
///
/// Starts from a seeded standard-normal unit vector, iterates
/// `v <- Av / ||Av||` and stops once the Rayleigh quotient drift drops to
/// `tol`. On an indefinite operator this tracks the eigenvalue of largest
/// magnitude. An operator that maps an iterate to zero reports `0`, converged.
pub fn power_iteration<F>(mut apply: F, dim: usize, max_iters: usize, tol: f64, seed: u64) -> Result<SharpnessEstimate>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    if dim == 0 || max_iters == 0 || !(tol > 0.0) {
        return Err(Error::invalid(
            "power iteration needs dim >= 1, max_iters >= 1 and tol > 0",
        ));
    }
    let mut rng = stream_rng(seed, 0);
    let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let n0 = dot(&v, &v).sqrt();
    v.iter_mut().for_each(|x| *x /= n0);

    let mut prev: Option<f64> = None;
    let mut estimate = SharpnessEstimate {
        lambda_max: 0.0,
        iterations: 0,
        converged: false,
        residual: f64::INFINITY,
    };
    for k in 1..=max_iters {
        let w = apply(&v)?;
        let norm = dot(&w, &w).sqrt();
        if norm == 0.0 {
            return Ok(SharpnessEstimate {
                lambda_max: 0.0,
                iterations: k,
                converged: true,
                residual: 0.0,
            });
        }
        let lambda = dot(&v, &w);
        let residual = prev.map_or(f64::INFINITY, |p| (lambda - p).abs() / lambda.abs().max(1.0));
        estimate = SharpnessEstimate {
            lambda_max: lambda,
            iterations: k,
            converged: residual <= tol,
            residual,
        };
        if estimate.converged {
            break;
        }
        prev = Some(lambda);
        v = w.into_iter().map(|x| x / norm).collect();
    }
    Ok(estimate)
}
