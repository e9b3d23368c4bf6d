use serde::{Deserialize, Serialize};

use super::moments::MomentSet;
use crate::error::{Error, Result};
use crate::linalg::{lambda1, Matrix};
use crate::optim::Method;

/// Tolerance on `|alpha λ1(J*) − 1|` for an edge verdict.
pub const EDGE_TOL: f64 = 1e-6;

/// Least-squares fit of `J* ≈ beta Σ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaFit {
    pub beta: f64,
    /// `||J* − beta Σ||_F / ||J*||_F`.
    pub fit_ratio: f64,
}

/// `beta = tr(J* Σ) / tr(Σ²)`, the Frobenius least-squares coefficient.
pub fn estimate_beta(jstar: &Matrix, sigma: &Matrix) -> Result<BetaFit> {
    let denom = sigma.dot(sigma);
    if denom == 0.0 {
        return Err(Error::UndefinedAlignment);
    }
    let beta = jstar.dot(sigma) / denom;
    let jnorm = jstar.norm();
    let resid = (jstar - sigma * beta).norm();
    let fit_ratio = if jnorm > 0.0 { resid / jnorm } else { f64::INFINITY };
    Ok(BetaFit { beta, fit_ratio })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Stable,
    Unstable,
    Edge,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Stable => "stable",
            Verdict::Unstable => "unstable",
            Verdict::Edge => "edge",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub method: Method,
    pub lambda1_jstar: f64,
    pub lambda1_sigma: f64,
    /// `None` when `Σ = 0`, where no alignment exists.
    pub beta_hat: Option<f64>,
    pub alpha: f64,
    pub verdict: Verdict,
    /// `eta λ1(J*) <= 2`.
    pub s1: bool,
    /// `eta² λ1(Σ) <= 1`.
    pub s2: bool,
}

/// `alpha = max(eta / 2, eta² / beta)`; `eta / 2` when `beta` is absent.
///
/// Under `J* = beta Σ` the noise condition `eta² λ1(Σ) <= 1` reads
/// `(eta² / beta) λ1(J*) <= 1`, so `alpha λ1(J*) <= 1` is exactly the pair of
/// conditions `eta λ1(J*) <= 2` and `eta² λ1(Σ) <= 1`.
pub fn stability_alpha(eta: f64, beta_hat: Option<f64>) -> f64 {
    match beta_hat {
        Some(b) if b > 0.0 => (eta / 2.0).max(eta * eta / b),
        Some(_) => f64::INFINITY,
        None => eta / 2.0,
    }
}

/// Verdict from raw `J*` and `Σ`.
pub fn classify_matrices(
    method: Method,
    jstar: &Matrix,
    sigma: &Matrix,
    eta: f64,
    beta_hat: Option<f64>,
) -> StabilityReport {
    let lambda1_jstar = lambda1(jstar);
    let lambda1_sigma = lambda1(sigma);
    let alpha = stability_alpha(eta, beta_hat);
    let score = alpha * lambda1_jstar;
    let verdict = if (score - 1.0).abs() <= EDGE_TOL {
        Verdict::Edge
    } else if score <= 1.0 {
        Verdict::Stable
    } else {
        Verdict::Unstable
    };
    StabilityReport {
        method,
        lambda1_jstar,
        lambda1_sigma,
        beta_hat,
        alpha,
        verdict,
        s1: eta * lambda1_jstar <= 2.0,
        s2: eta * eta * lambda1_sigma <= 1.0,
    }
}

pub fn classify_stability(moments: &MomentSet, method: Method, eta: f64, beta_hat: Option<f64>) -> StabilityReport {
    classify_matrices(method, moments.jstar(method), moments.sigma(method), eta, beta_hat)
}

/// `β̂` fitted on the SGD moments, shared by all three methods. `None` for a
/// noiseless (full-batch) scheme.
pub fn common_beta(moments: &MomentSet) -> Result<Option<BetaFit>> {
    match estimate_beta(moments.jstar(Method::Sgd), moments.sigma(Method::Sgd)) {
        Ok(fit) => Ok(Some(fit)),
        Err(Error::UndefinedAlignment) => Ok(None),
        Err(e) => Err(e),
    }
}
