use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::{DatasetSpec, ExperimentConfig};
use crate::autodiff::{accuracy, Batch, ModelSpec};
use crate::data::{
    epoch_batches, gen_gaussian_mixture, make_shards, read_idx, read_idx_pair, stream_rng, Dataset, ShardPolicy,
};
use crate::error::{Error, Result};
use crate::optim::{hybrid_select, step, Method, OptimizerConfig, OptimizerState};
use crate::sharpness::{lambda_max_power, SharpnessEstimate};
use crate::tensor::ParamVector;

/// RNG stream for parameter initialization.
pub const INIT_STREAM: u64 = 0;
/// RNG stream for minibatch order.
pub const ORDER_STREAM: u64 = 1;
/// RNG stream for shard plans.
pub const SHARD_STREAM: u64 = 2;
/// Offset added to the run seed for the power-iteration start vector.
pub const SHARPNESS_SEED_OFFSET: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    /// Minibatch loss at the pre-update parameters.
    pub train_loss: f64,
    pub eval_acc: Option<f64>,
}

/// Method selection for a run: one fixed method or a switch part-way through.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MethodPlan {
    Fixed(Method),
    /// `start` for the first `switch_percent` of steps, then `end`.
    Switch {
        start: Method,
        end: Method,
        switch_percent: f64,
    },
}

impl MethodPlan {
    pub fn method_at(self, step: usize, total: usize) -> Method {
        match self {
            MethodPlan::Fixed(m) => m,
            MethodPlan::Switch {
                start,
                end,
                switch_percent,
            } => hybrid_select(step, total, switch_percent, start, end),
        }
    }

    /// Label used in reports: `msam` or `msam>sgd@40`.
    pub fn label(self) -> String {
        match self {
            MethodPlan::Fixed(m) => m.name().to_string(),
            MethodPlan::Switch {
                start,
                end,
                switch_percent,
            } => format!("{start}>{end}@{switch_percent}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainResult {
    pub seed: u64,
    pub method: String,
    pub m: usize,
    pub rho: f64,
    pub eta: f64,
    pub records: Vec<StepRecord>,
    pub sharpness: Option<SharpnessEstimate>,
    /// Held-out accuracy after the last step.
    pub final_eval_acc: Option<f64>,
    #[serde(skip)]
    pub wall_time_secs: f64,
}

impl TrainResult {
    pub fn lambda_max(&self) -> Option<f64> {
        self.sharpness.map(|s| s.lambda_max)
    }

    /// Equality of everything except wall time.
    pub fn same_outcome(&self, other: &TrainResult) -> bool {
        let strip = |r: &TrainResult| TrainResult {
            wall_time_secs: 0.0,
            ..r.clone()
        };
        strip(self) == strip(other)
    }
}

/// Dataset named by the config, split into (train, eval). The eval split is
/// the trailing `holdout` fraction.
pub fn load_dataset(config: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    let full = match &config.dataset {
        DatasetSpec::GaussianMixture {
            k,
            p,
            n,
            separation,
            seed,
        } => gen_gaussian_mixture(*k, *p, *n, *separation, *seed)?,
        DatasetSpec::Idx {
            images,
            labels,
            num_classes,
        } => match labels {
            Some(l) => read_idx_pair(images, l, *num_classes)?,
            None => read_idx(images)?,
        },
    };
    full.split_holdout(config.holdout)
}

pub fn model_for(config: &ExperimentConfig, train: &Dataset) -> Result<ModelSpec> {
    let out = match train.labels() {
        crate::data::Labels::Classes { num_classes, .. } => *num_classes,
        crate::data::Labels::Targets { width, .. } => *width,
        crate::data::Labels::Unlabeled => {
            return Err(Error::Config {
                key: "dataset".into(),
                message: "training needs labels".into(),
            })
        }
    };
    let mut widths = vec![train.num_features()];
    widths.extend(&config.model.hidden);
    widths.push(out);
    ModelSpec::new(widths, config.model.activation, config.model.head)
}

/// Trains with the config's optimizer for one seed.
pub fn run_training(config: &ExperimentConfig, seed: u64) -> Result<TrainResult> {
    let (train, eval) = load_dataset(config)?;
    run_training_on(config, &train, &eval, MethodPlan::Fixed(config.optimizer.method), seed)
}

/// Trains on preloaded splits. Minibatches are full size; a trailing partial
/// batch in each epoch is skipped.
pub fn run_training_on(
    config: &ExperimentConfig,
    train: &Dataset,
    eval: &Dataset,
    plan: MethodPlan,
    seed: u64,
) -> Result<TrainResult> {
    let start = Instant::now();
    let model = model_for(config, train)?;
    let b = config.batch_size;
    if b == 0 || b > train.len() {
        return Err(Error::Config {
            key: "batch_size".into(),
            message: format!("B = {b} must lie in 1..={}", train.len()),
        });
    }
    let steps_per_epoch = train.len() / b;
    let total = steps_per_epoch * config.epochs;
    let policy = if config.strict_shards {
        ShardPolicy::Strict
    } else {
        ShardPolicy::Weighted
    };

    let mut params = model.init_params(&mut stream_rng(seed, INIT_STREAM));
    let mut order_rng = stream_rng(seed, ORDER_STREAM);
    let mut shard_rng = stream_rng(seed, SHARD_STREAM);
    let mut state = OptimizerState::new(params.len());
    let mut records = Vec::with_capacity(total);
    let has_classes = matches!(eval.labels(), crate::data::Labels::Classes { .. });
    let eval_batch = (has_classes && !eval.is_empty()).then(|| Batch::full(eval));

    let mut t = 0;
    for _ in 0..config.epochs {
        let batches = epoch_batches(train.len(), b, &mut order_rng);
        for indices in batches.iter().filter(|ix| ix.len() == b) {
            let method = plan.method_at(t, total);
            let opt = OptimizerConfig {
                method,
                lr: config.schedule.lr_at(config.optimizer.lr, t, total),
                ..config.optimizer.clone()
            };
            let batch = Batch::new(train, indices);
            let shard_seed: u64 = shard_rng.random();
            let shards = if method == Method::Msam {
                Some(make_shards(indices, opt.m, policy, shard_seed)?)
            } else {
                None
            };
            let outcome = step(&model, &params, &batch, shards.as_ref(), &opt, &mut state).map_err(|e| match e {
                Error::NonFinite { .. } => Error::Divergence { step: t },
                other => other,
            })?;
            if !outcome.loss.is_finite() || !outcome.params.is_finite() {
                return Err(Error::Divergence { step: t });
            }
            params = outcome.params;
            t += 1;
            let due = t == total || (config.eval_every > 0 && t % config.eval_every == 0);
            let eval_acc = match (&eval_batch, due) {
                (Some(eb), true) => Some(evaluate(&model, &params, eb, t)?),
                _ => None,
            };
            records.push(StepRecord {
                step: t,
                train_loss: outcome.loss,
                eval_acc,
            });
        }
    }

    let sharpness = if config.sharpness.enabled {
        Some(
            lambda_max_power(
                &model,
                &params,
                train,
                config.sharpness.max_iters,
                config.sharpness.tol,
                seed.wrapping_add(SHARPNESS_SEED_OFFSET),
            )
            .map_err(|e| match e {
                Error::NonFinite { .. } => Error::Divergence { step: t },
                other => other,
            })?,
        )
    } else {
        None
    };
    let final_eval_acc = records.last().and_then(|r| r.eval_acc);
    Ok(TrainResult {
        seed,
        method: plan.label(),
        m: config.optimizer.m,
        rho: config.optimizer.rho,
        eta: config.optimizer.lr,
        records,
        sharpness,
        final_eval_acc,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

fn evaluate(model: &ModelSpec, params: &ParamVector, batch: &Batch<'_>, t: usize) -> Result<f64> {
    accuracy(model, params, batch).map_err(|e| match e {
        Error::NonFinite { .. } => Error::Divergence { step: t },
        other => other,
    })
}
