use serde::{Deserialize, Serialize};

use super::classify::{classify_stability, common_beta, stability_alpha, Verdict};
use super::ensemble::HessianEnsemble;
use super::moments::{compute_moments, MomentSet, SamplingScheme};
use crate::error::{Error, Result};
use crate::linalg::{lambda1, lambda_min, Matrix};
use crate::optim::Method;

/// Smallest eigenvalue still accepted as PSD in the ordering checks.
pub const PSD_TOL: f64 = -1e-9;

/// `points` values spaced evenly in log scale over `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi >= lo && points >= 1, "invalid grid");
    if points == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..points)
        .map(|i| (a + (b - a) * i as f64 / (points - 1) as f64).exp())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingReport {
    /// `λ1(J*)` for sgd, sam, msam.
    pub lambda1: [f64; 3],
    pub min_eig_sam_minus_sgd: f64,
    pub min_eig_msam_minus_sam: f64,
    pub psd_chain: bool,
    pub lambda_ordered: bool,
    /// SGD-fitted alignment shared by all methods.
    pub beta_hat: Option<f64>,
    pub fit_ratio: Option<f64>,
    pub etas: Vec<f64>,
    /// Unstable verdict counts over the grid for sgd, sam, msam.
    pub unstable: [usize; 3],
    /// Grid points where SGD is unstable but SAM is not.
    pub sgd_to_sam_counterexamples: usize,
    /// Grid points where SAM is unstable but mSAM is not.
    pub sam_to_msam_counterexamples: usize,
}

impl OrderingReport {
    pub fn passed(&self) -> bool {
        self.psd_chain
            && self.lambda_ordered
            && self.sgd_to_sam_counterexamples == 0
            && self.sam_to_msam_counterexamples == 0
    }
}

pub fn ordering_from_moments(moments: &MomentSet, etas: &[f64]) -> Result<OrderingReport> {
    let j = &moments.jstar;
    let min_eig_sam_minus_sgd = lambda_min(&(&j[1] - &j[0]));
    let min_eig_msam_minus_sam = lambda_min(&(&j[2] - &j[1]));
    let lambda1: [f64; 3] = std::array::from_fn(|k| crate::linalg::lambda1(&j[k]));
    let fit = common_beta(moments)?;
    let beta_hat = fit.map(|f| f.beta);

    let mut unstable = [0; 3];
    let (mut sgd_sam, mut sam_msam) = (0, 0);
    for &eta in etas {
        let v: [bool; 3] = std::array::from_fn(|k| {
            classify_stability(moments, Method::ALL[k], eta, beta_hat).verdict == Verdict::Unstable
        });
        for k in 0..3 {
            unstable[k] += usize::from(v[k]);
        }
        sgd_sam += usize::from(v[0] && !v[1]);
        sam_msam += usize::from(v[1] && !v[2]);
    }
    Ok(OrderingReport {
        lambda1,
        min_eig_sam_minus_sgd,
        min_eig_msam_minus_sam,
        psd_chain: min_eig_sam_minus_sgd >= PSD_TOL && min_eig_msam_minus_sam >= PSD_TOL,
        lambda_ordered: lambda1[2] >= lambda1[1] && lambda1[1] >= lambda1[0],
        beta_hat,
        fit_ratio: fit.map(|f| f.fit_ratio),
        etas: etas.to_vec(),
        unstable,
        sgd_to_sam_counterexamples: sgd_sam,
        sam_to_msam_counterexamples: sam_msam,
    })
}

/// PSD chain `J3* ⪰ J2* ⪰ J1*`, the `λ1` ordering, and the instability
/// implications sgd → sam → msam over `etas`.
pub fn ordering_check(
    ens: &HessianEnsemble,
    scheme: &SamplingScheme,
    rho: f64,
    etas: &[f64],
) -> Result<OrderingReport> {
    let moments = compute_moments(ens, scheme, rho)?;
    ordering_from_moments(&moments, etas)
}

/// Edge scales for the three methods at one learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeReport {
    pub eta: f64,
    /// Factor `c` such that the ensemble `c H_i` sits on the edge.
    pub scales: [f64; 3],
    /// `λ1(H̄)` of the edge ensemble, `c λ1(H̄)`.
    pub lambda1_mean_hessian: [f64; 3],
    pub fit_ratio: f64,
}

/// Scales the ensemble by `c` until each method reaches `alpha λ1(J*) = 1`.
///
/// Every `J_{k,S}` is `c H_S + c² P_{k,S}` on the scaled ensemble, so
/// `J_k*(c) = c H̄ + c² (J_k*(1) − H̄)`, `Σ_1(c) = c² Σ_1(1)` and the SGD fit
/// gives `beta(c) = beta(1) / c`. The scale is found by bisection on this
/// closed form; the returned `λ1(H̄)` values are the sharpness each method
/// tolerates at the edge.
pub fn edge_scales(moments: &MomentSet, eta: f64) -> Result<EdgeReport> {
    if !(eta > 0.0) {
        return Err(Error::invalid("eta must be positive"));
    }
    let fit = common_beta(moments)?.ok_or(Error::UndefinedAlignment)?;
    let hbar = &moments.mean_hessian;
    let l1_hbar = lambda1(hbar);
    if !(l1_hbar > 0.0) {
        return Err(Error::invalid("mean Hessian has no positive curvature"));
    }
    let mut scales = [0.0; 3];
    for (k, scale) in scales.iter_mut().enumerate() {
        let curvature: Matrix = &moments.jstar[k] - hbar;
        let score = |c: f64| {
            let alpha = stability_alpha(eta, Some(fit.beta / c));
            alpha * lambda1(&(hbar * c + &curvature * (c * c))) - 1.0
        };
        let mut hi = 1.0;
        while score(hi) <= 0.0 {
            hi *= 2.0;
        }
        let mut lo: f64 = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if score(mid) <= 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        *scale = if lo > 0.0 && score(lo).abs() < score(hi).abs() {
            lo
        } else {
            hi
        };
    }
    Ok(EdgeReport {
        eta,
        scales,
        lambda1_mean_hessian: scales.map(|c| c * l1_hbar),
        fit_ratio: fit.fit_ratio,
    })
}
