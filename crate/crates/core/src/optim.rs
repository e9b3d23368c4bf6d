//! SGD, SAM and micro-batch SAM (mSAM) update rules.
//!
//! All three share the same update machinery: weight decay is added to the
//! final gradient, the heavy-ball buffer is updated as `v <- mu v + g`, and
//! the parameters move by `w <- w - lr v`. The methods differ only in the
//! gradient fed to that machinery:
//!
//! * SGD uses `∇L_S(w)`.
//! * SAM uses `∇L_S(w + e)` with the ascent step `e = rho ∇L_S(w) / ||∇L_S(w)||`.
//! * mSAM computes an independent ascent step per shard `S_j` and averages the
//!   perturbed shard gradients, weighting shard `j` by `|S_j| / B`.

use serde::{Deserialize, Serialize};

use crate::autodiff::{loss_and_grad, Batch, ModelSpec};
use crate::data::MicroBatchPlan;
use crate::error::{Error, Result};
use crate::tensor::ParamVector;

/// Gradient norms below this are treated as zero when normalizing the ascent step.
pub const ZERO_GRAD_NORM: f64 = 1e-30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Sgd,
    Sam,
    Msam,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Sgd, Method::Sam, Method::Msam];

    pub fn name(self) -> &'static str {
        match self {
            Method::Sgd => "sgd",
            Method::Sam => "sam",
            Method::Msam => "msam",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AscentNorm {
    /// `rho g / ||g||_2`.
    L2Normalized,
    /// `rho g`, the form used by the linear-stability analysis.
    Unnormalized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub method: Method,
    pub lr: f64,
    /// Perturbation radius, shared by every shard.
    pub rho: f64,
    /// Number of micro-batches for mSAM.
    pub m: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub ascent: AscentNorm,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            method: Method::Sgd,
            lr: 0.1,
            rho: 0.05,
            m: 1,
            momentum: 0.0,
            weight_decay: 0.0,
            ascent: AscentNorm::L2Normalized,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid("learning rate must be finite and non-negative"));
        }
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return Err(Error::invalid("rho must be finite and non-negative"));
        }
        if self.m == 0 {
            return Err(Error::invalid("m must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must lie in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::invalid("weight decay must be non-negative"));
        }
        Ok(())
    }
}

/// Momentum buffer and step count.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub velocity: ParamVector,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(num_params: usize) -> Self {
        OptimizerState {
            velocity: ParamVector::zeros(num_params),
            step: 0,
        }
    }
}

/// Result of one update.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub params: ParamVector,
    /// Minibatch loss at the pre-update parameters.
    pub loss: f64,
}

/// SAM ascent step. A gradient with norm below [`ZERO_GRAD_NORM`] yields the
/// zero vector in the normalized variant.
pub fn sam_perturbation(g: &ParamVector, rho: f64, ascent: AscentNorm) -> ParamVector {
    match ascent {
        AscentNorm::Unnormalized => g.scaled(rho),
        AscentNorm::L2Normalized => {
            let norm = g.norm();
            if norm < ZERO_GRAD_NORM {
                ParamVector::zeros(g.len())
            } else {
                g.scaled(rho / norm)
            }
        }
    }
}

fn apply_update(
    params: &ParamVector,
    grad: ParamVector,
    config: &OptimizerConfig,
    state: &mut OptimizerState,
) -> ParamVector {
    let g = if config.weight_decay != 0.0 {
        grad.add_scaled(config.weight_decay, params)
    } else {
        grad
    };
    state.velocity = if config.momentum != 0.0 {
        state.velocity.scaled(config.momentum).add(&g)
    } else {
        g
    };
    state.step += 1;
    params.add_scaled(-config.lr, &state.velocity)
}

/// Gradient at `w + e(g)` where `g` is the batch gradient at `w`.
fn ascent_gradient(
    model: &ModelSpec,
    params: &ParamVector,
    batch: &Batch<'_>,
    g: ParamVector,
    config: &OptimizerConfig,
) -> Result<ParamVector> {
    if config.rho == 0.0 {
        return Ok(g);
    }
    let eps = sam_perturbation(&g, config.rho, config.ascent);
    if eps.as_slice().iter().all(|&e| e == 0.0) {
        return Ok(g);
    }
    let (_, g2) = loss_and_grad(model, &params.add(&eps), batch)?;
    Ok(g2)
}

fn sgd_outcome(
    model: &ModelSpec,
    params: &ParamVector,
    batch: &Batch<'_>,
    config: &OptimizerConfig,
    state: &mut OptimizerState,
) -> Result<StepOutcome> {
    let (loss, g) = loss_and_grad(model, params, batch)?;
    Ok(StepOutcome {
        params: apply_update(params, g, config, state),
        loss,
    })
}

fn sam_outcome(
    model: &ModelSpec,
    params: &ParamVector,
    batch: &Batch<'_>,
    config: &OptimizerConfig,
    state: &mut OptimizerState,
) -> Result<StepOutcome> {
    let (loss, g) = loss_and_grad(model, params, batch)?;
    let g2 = ascent_gradient(model, params, batch, g, config)?;
    Ok(StepOutcome {
        params: apply_update(params, g2, config, state),
        loss,
    })
}

fn msam_outcome(
    model: &ModelSpec,
    params: &ParamVector,
    batch: &Batch<'_>,
    plan: &MicroBatchPlan,
    config: &OptimizerConfig,
    state: &mut OptimizerState,
) -> Result<StepOutcome> {
    plan.check_covers(batch.indices())?;
    if config.rho == 0.0 {
        return sgd_outcome(model, params, batch, config, state);
    }
    if plan.num_shards() == 1 {
        return sam_outcome(model, params, batch, config, state);
    }
    let weights = plan.weights();
    let mut aggregate = ParamVector::zeros(params.len());
    let mut loss = 0.0;
    for (shard, &weight) in plan.shards().zip(&weights) {
        let sb = batch.select(shard);
        let (l, g) = loss_and_grad(model, params, &sb)?;
        let g2 = ascent_gradient(model, params, &sb, g, config)?;
        aggregate = aggregate.add_scaled(weight, &g2);
        loss += weight * l;
    }
    Ok(StepOutcome {
        params: apply_update(params, aggregate, config, state),
        loss,
    })
}

/// One update with the method named in `config`. `plan` is required for mSAM
/// and ignored otherwise.
pub fn step(
    model: &ModelSpec,
    params: &ParamVector,
    batch: &Batch<'_>,
    plan: Option<&MicroBatchPlan>,
    config: &OptimizerConfig,
    state: &mut OptimizerState,
) -> Result<StepOutcome> {
    config.validate()?;
    if state.velocity.len() != params.len() {
        return Err(Error::ParamLength {
            expected: params.len(),
            found: state.velocity.len(),
        });
    }
    match config.method {
        Method::Sgd => sgd_outcome(model, params, batch, config, state),
        Method::Sam => sam_outcome(model, params, batch, config, state),
        Method::Msam => {
            let plan = plan.ok_or_else(|| Error::Partition("mSAM needs a micro-batch plan".into()))?;
            msam_outcome(model, params, batch, plan, config, state)
        }
    }
}

pub fn sgd_step(
    model: &ModelSpec,
    params: &ParamVector,
    batch: &Batch<'_>,
    config: &OptimizerConfig,
    state: &mut OptimizerState,
) -> Result<ParamVector> {
    let config = OptimizerConfig {
        method: Method::Sgd,
        ..config.clone()
    };
    step(model, params, batch, None, &config, state).map(|o| o.params)
}

pub fn sam_step(
    model: &ModelSpec,
    params: &ParamVector,
    batch: &Batch<'_>,
    config: &OptimizerConfig,
    state: &mut OptimizerState,
) -> Result<ParamVector> {
    let config = OptimizerConfig {
        method: Method::Sam,
        ..config.clone()
    };
    step(model, params, batch, None, &config, state).map(|o| o.params)
}

pub fn msam_step(
    model: &ModelSpec,
    params: &ParamVector,
    batch: &Batch<'_>,
    plan: &MicroBatchPlan,
    config: &OptimizerConfig,
    state: &mut OptimizerState,
) -> Result<ParamVector> {
    let config = OptimizerConfig {
        method: Method::Msam,
        ..config.clone()
    };
    step(model, params, batch, Some(plan), &config, state).map(|o| o.params)
}

/// Method in effect at `step` of a two-phase schedule: `start` while
/// `step < switch_percent / 100 * total_steps`, `end` afterwards.
pub fn hybrid_select(step: usize, total_steps: usize, switch_percent: f64, start: Method, end: Method) -> Method {
    debug_assert!((0.0..=100.0).contains(&switch_percent));
    if (step as f64) * 100.0 < switch_percent * total_steps as f64 {
        start
    } else {
        end
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perturbation_unit_scaling() {
        let g = ParamVector::new(vec![3.0, 4.0]).unwrap();
        let e = sam_perturbation(&g, 1.0, AscentNorm::L2Normalized);
        assert!((e.as_slice()[0] - 0.6).abs() < 1e-15 && (e.as_slice()[1] - 0.8).abs() < 1e-15);
        assert!((e.norm() - 1.0).abs() < 1e-15);
        let e = sam_perturbation(&g, 0.5, AscentNorm::Unnormalized);
        assert_eq!(e.as_slice(), &[1.5, 2.0]);
    }

    #[test]
    fn perturbation_degenerate_cases() {
        let z = ParamVector::zeros(3);
        assert_eq!(sam_perturbation(&z, 0.2, AscentNorm::L2Normalized), z);
        let g = ParamVector::new(vec![1.0, -2.0, 0.5]).unwrap();
        assert!(sam_perturbation(&g, 0.0, AscentNorm::L2Normalized)
            .as_slice()
            .iter()
            .all(|&x| x == 0.0));
    }

    #[test]
    fn hybrid_threshold() {
        use Method::*;
        assert_eq!(hybrid_select(19, 100, 20.0, Msam, Sgd), Msam);
        assert_eq!(hybrid_select(20, 100, 20.0, Msam, Sgd), Sgd);
        assert_eq!(hybrid_select(0, 100, 0.0, Msam, Sgd), Sgd);
        assert!((0..100).all(|s| hybrid_select(s, 100, 100.0, Msam, Sgd) == Msam));
        // thresholds that are not whole steps
        assert_eq!(hybrid_select(6, 33, 20.0, Msam, Sgd), Msam);
        assert_eq!(hybrid_select(7, 33, 20.0, Msam, Sgd), Sgd);
    }

    #[test]
    fn config_validation() {
        let mut c = OptimizerConfig::default();
        assert!(c.validate().is_ok());
        c.m = 0;
        assert!(c.validate().is_err());
        c.m = 1;
        c.momentum = 1.0;
        assert!(c.validate().is_err());
    }
}
