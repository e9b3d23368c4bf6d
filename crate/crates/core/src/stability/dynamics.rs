use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::ensemble::HessianEnsemble;
use super::moments::{j_minibatch, minibatch_matrices, random_draw, SamplingMode, SamplingScheme};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::optim::Method;

/// Growth factor over `||w0||` that counts as divergence.
pub const DIVERGENCE_FACTOR: f64 = 1e12;
/// Shrink factor under `||w0||` that counts as decay.
pub const DECAY_FACTOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "outcome", content = "step")]
pub enum DynamicsOutcome {
    Diverged(usize),
    Decayed(usize),
    Bounded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// `||w_t||` for `t = 0..`; stops at the step that triggered a flag.
    pub norms: Vec<f64>,
    pub outcome: DynamicsOutcome,
}

impl Trajectory {
    pub fn diverged(&self) -> bool {
        matches!(self.outcome, DynamicsOutcome::Diverged(_))
    }

    pub fn decayed(&self) -> bool {
        matches!(self.outcome, DynamicsOutcome::Decayed(_))
    }
}

fn check_start(ens: &HessianEnsemble, w0: &[f64], steps: usize) -> Result<DVector<f64>> {
    if steps == 0 {
        return Err(Error::invalid("steps must be at least 1"));
    }
    if w0.len() != ens.dim() {
        return Err(Error::ParamLength {
            expected: ens.dim(),
            found: w0.len(),
        });
    }
    let w = DVector::from_column_slice(w0);
    if !(w.norm() > 0.0) || !w.iter().all(|x| x.is_finite()) {
        return Err(Error::invalid("w0 must be finite and non-zero"));
    }
    Ok(w)
}

/// Iterates `w_{t+1} = (I − eta J_S) w_t` with a fresh draw of the scheme's
/// minibatch law each step. Step `t` uses stream `t` of `seed`; the scheme's
/// own sampling mode is not consulted.
#[allow(clippy::too_many_arguments)]
pub fn simulate_dynamics(
    ens: &HessianEnsemble,
    method: Method,
    eta: f64,
    rho: f64,
    scheme: &SamplingScheme,
    w0: &[f64],
    steps: usize,
    seed: u64,
) -> Result<Trajectory> {
    let mut w = check_start(ens, w0, steps)?;
    let probe = SamplingScheme {
        mode: SamplingMode::MonteCarlo { trials: 2, seed },
        ..*scheme
    };
    probe.validate(ens.n())?;
    let (n, b, m) = (ens.n(), scheme.batch_size, scheme.shards);
    // A full, unsharded batch is the same matrix every step.
    let fixed = if b == n && m == 1 {
        let all: Vec<usize> = (0..n).collect();
        Some(j_minibatch(ens, &all, std::slice::from_ref(&all), method, rho)?)
    } else {
        None
    };

    let n0 = w.norm();
    let mut norms = vec![n0];
    for t in 0..steps {
        let j = match &fixed {
            Some(j) => j.clone(),
            None => {
                let (subset, partition) = random_draw(n, b, m, seed, t as u64);
                j_minibatch(ens, &subset, &partition, method, rho)?
            }
        };
        w = &w - (&j * &w) * eta;
        let norm = w.norm();
        norms.push(norm);
        if !(norm <= DIVERGENCE_FACTOR * n0) {
            return Ok(Trajectory {
                norms,
                outcome: DynamicsOutcome::Diverged(t + 1),
            });
        }
        if norm < DECAY_FACTOR * n0 {
            return Ok(Trajectory {
                norms,
                outcome: DynamicsOutcome::Decayed(t + 1),
            });
        }
    }
    Ok(Trajectory {
        norms,
        outcome: DynamicsOutcome::Bounded,
    })
}

/// Exact `E||w_t||²` for `t = 0..=steps` from the recursion
/// `M_{t+1} = E[(I − eta J_S) M_t (I − eta J_S)]`, `M_0 = w0 w0ᵀ`, with the
/// expectation taken by exhaustive enumeration.
pub fn expected_sq_norms(
    ens: &HessianEnsemble,
    method: Method,
    eta: f64,
    rho: f64,
    scheme: &SamplingScheme,
    w0: &[f64],
    steps: usize,
) -> Result<Vec<f64>> {
    let w = check_start(ens, w0, steps)?;
    let exhaustive = SamplingScheme {
        mode: SamplingMode::Exhaustive,
        ..*scheme
    };
    let id = Matrix::identity(ens.dim(), ens.dim());
    let steps_mats: Vec<Matrix> = minibatch_matrices(ens, &exhaustive, method, rho)?
        .into_iter()
        .map(|j| &id - j * eta)
        .collect();
    let count = steps_mats.len() as f64;
    let mut m = &w * w.transpose();
    let mut out = vec![m.trace()];
    for _ in 0..steps {
        let mut next = Matrix::zeros(ens.dim(), ens.dim());
        for a in &steps_mats {
            next += a * &m * a;
        }
        m = next / count;
        out.push(m.trace());
    }
    Ok(out)
}
