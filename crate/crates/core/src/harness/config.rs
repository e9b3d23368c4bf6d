//! Experiment configuration.
//!
//! Configs are JSON documents. Unknown keys are rejected at every level, and
//! every key except `kind` is optional. Defaults:
//!
//! | key | default |
//! |---|---|
//! | `kind` | required: `train`, `sweep-m`, `sweep-switch`, `stability` or `sharpness` |
//! | `dataset.generator` | `gaussian-mixture` |
//! | `dataset.k` / `p` / `n` | `10` / `20` / `2000` |
//! | `dataset.separation` | `3.0` |
//! | `dataset.seed` | `0` |
//! | `dataset.images`, `labels`, `num_classes` (generator `idx`) | `labels` and `num_classes` optional |
//! | `holdout` | `0.2` |
//! | `model.hidden` | `[32]` |
//! | `model.activation` | `relu` |
//! | `model.head` | `softmax-cross-entropy` |
//! | `optimizer.method` | `sgd` |
//! | `optimizer.lr` / `rho` / `m` | `0.1` / `0.05` / `1` |
//! | `optimizer.momentum` / `weight_decay` | `0` / `0` |
//! | `optimizer.ascent` | `l2-normalized` |
//! | `epochs` | `30` |
//! | `batch_size` | `128` |
//! | `seeds` | `[0, 1, 2, 3, 4]` |
//! | `eval_every` | `0` (evaluate after the last step only) |
//! | `schedule` | `constant` (or `one-cycle`: 5% linear warmup, then linear decay) |
//! | `sharpness.enabled` / `max_iters` / `tol` | `true` / `200` / `1e-6` |
//! | `strict_shards` | `false` (uneven shards weighted by size; `true` requires `m` to divide `B`) |
//! | `output` | `out` |
//! | `sweep.values` | `[1, 4, 8, 16, 32]` for `sweep-m`, `[0, 20, 40, 60, 80, 100]` for `sweep-switch` |
//! | `sweep.start_method` / `end_method` | `msam` / `sgd` |
//! | `stability.n` / `d` / `kind` / `seed` | `8` / `6` / `full-rank` / `0` |
//! | `stability.batch_size` / `shards` | `4` / `2` |
//! | `stability.mode` | `exhaustive` |
//! | `stability.rho` / `eta` | `0.1` / `0.5` |
//! | `stability.eta_grid` | `{ "lo": 0.01, "hi": 10.0, "points": 50 }` |

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, Head};
use crate::error::{Error, Result};
use crate::optim::{Method, OptimizerConfig};
use crate::stability::{EnsembleKind, SamplingMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Train,
    SweepM,
    SweepSwitch,
    Stability,
    Sharpness,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Train => "train",
            ExperimentKind::SweepM => "sweep-m",
            ExperimentKind::SweepSwitch => "sweep-switch",
            ExperimentKind::Stability => "stability",
            ExperimentKind::Sharpness => "sharpness",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetSpec {
    GaussianMixture {
        #[serde(default = "default_k")]
        k: usize,
        #[serde(default = "default_p")]
        p: usize,
        #[serde(default = "default_n")]
        n: usize,
        #[serde(default = "default_separation")]
        separation: f64,
        #[serde(default)]
        seed: u64,
    },
    Idx {
        images: PathBuf,
        #[serde(default)]
        labels: Option<PathBuf>,
        #[serde(default)]
        num_classes: Option<usize>,
    },
}

fn default_k() -> usize {
    10
}
fn default_p() -> usize {
    20
}
fn default_n() -> usize {
    2000
}
fn default_separation() -> f64 {
    3.0
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::GaussianMixture {
            k: default_k(),
            p: default_p(),
            n: default_n(),
            separation: default_separation(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub head: Head,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: vec![32],
            activation: Activation::Relu,
            head: Head::SoftmaxCrossEntropy,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    Constant,
    OneCycle,
}

/// Fraction of steps spent warming up under [`Schedule::OneCycle`].
pub const WARMUP_FRACTION: f64 = 0.05;

impl Schedule {
    /// Learning rate at `step` of `total` for base rate `lr`.
    pub fn lr_at(self, lr: f64, step: usize, total: usize) -> f64 {
        match self {
            Schedule::Constant => lr,
            Schedule::OneCycle => {
                let warm = ((total as f64 * WARMUP_FRACTION).ceil() as usize).max(1);
                if step < warm {
                    lr * (step + 1) as f64 / warm as f64
                } else {
                    let rest = (total - warm).max(1) as f64;
                    lr * (total - step) as f64 / rest
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SharpnessConfig {
    pub enabled: bool,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for SharpnessConfig {
    fn default() -> Self {
        SharpnessConfig {
            enabled: true,
            max_iters: 200,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// `m` values for `sweep-m`, switch percentages for `sweep-switch`.
    pub values: Option<Vec<f64>>,
    pub start_method: Method,
    pub end_method: Method,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            values: None,
            start_method: Method::Msam,
            end_method: Method::Sgd,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EtaGrid {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl Default for EtaGrid {
    fn default() -> Self {
        EtaGrid {
            lo: 0.01,
            hi: 10.0,
            points: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilityConfig {
    pub n: usize,
    pub d: usize,
    pub kind: EnsembleKind,
    pub seed: u64,
    pub batch_size: usize,
    pub shards: usize,
    pub mode: SamplingMode,
    pub rho: f64,
    pub eta: f64,
    pub eta_grid: EtaGrid,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        StabilityConfig {
            n: 8,
            d: 6,
            kind: EnsembleKind::FullRank,
            seed: 0,
            batch_size: 4,
            shards: 2,
            mode: SamplingMode::Exhaustive,
            rho: 0.1,
            eta: 0.5,
            eta_grid: EtaGrid::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub dataset: DatasetSpec,
    #[serde(default = "default_holdout")]
    pub holdout: f64,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub eval_every: usize,
    #[serde(default = "default_schedule")]
    pub schedule: Schedule,
    #[serde(default)]
    pub sharpness: SharpnessConfig,
    #[serde(default)]
    pub strict_shards: bool,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub stability: StabilityConfig,
}

fn default_holdout() -> f64 {
    0.2
}
fn default_epochs() -> usize {
    30
}
fn default_batch_size() -> usize {
    128
}
fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2, 3, 4]
}
fn default_schedule() -> Schedule {
    Schedule::Constant
}
fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn config_error(key: &str, message: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        message: message.into(),
    }
}

impl ExperimentConfig {
    /// A config of the given kind with every other key at its default.
    pub fn new(kind: ExperimentKind) -> Self {
        serde_json::from_value(serde_json::json!({ "kind": kind })).expect("defaults deserialize")
    }

    /// Strict JSON parse; errors name the offending key path.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let config: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            config_error(if path.is_empty() { "." } else { &path }, e.into_inner().to_string())
        })?;
        config.validate()?;
        Ok(config)
    }

    /// Number of examples before the holdout split.
    pub fn dataset_len(&self) -> Option<usize> {
        match self.dataset {
            DatasetSpec::GaussianMixture { n, .. } => Some(n),
            DatasetSpec::Idx { .. } => None,
        }
    }

    /// Training examples after the holdout split, when known without I/O.
    pub fn train_len(&self) -> Option<usize> {
        self.dataset_len().map(|n| n - holdout_count(n, self.holdout))
    }

    /// Sweep values, falling back to the per-kind defaults.
    pub fn sweep_values(&self) -> Vec<f64> {
        match (&self.sweep.values, self.kind) {
            (Some(v), _) => v.clone(),
            (None, ExperimentKind::SweepSwitch) => vec![0.0, 20.0, 40.0, 60.0, 80.0, 100.0],
            (None, _) => vec![1.0, 4.0, 8.0, 16.0, 32.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(config_error("seeds", "at least one seed is required"));
        }
        if !(self.holdout > 0.0 && self.holdout < 1.0) {
            return Err(config_error("holdout", "must lie strictly between 0 and 1"));
        }
        self.optimizer
            .validate()
            .map_err(|e| config_error("optimizer", e.to_string()))?;
        if self.kind == ExperimentKind::Stability {
            return self.validate_stability();
        }
        if self.epochs == 0 {
            return Err(config_error("epochs", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(config_error("batch_size", "must be at least 1"));
        }
        if self.model.hidden.contains(&0) {
            return Err(config_error("model.hidden", "layer widths must be positive"));
        }
        if let DatasetSpec::GaussianMixture {
            k, p, n, separation, ..
        } = self.dataset
        {
            if k < 2 || p == 0 || n == 0 || n % k != 0 {
                return Err(config_error("dataset", "need k >= 2, p >= 1 and n divisible by k"));
            }
            if !(separation >= 0.0 && separation.is_finite()) {
                return Err(config_error("dataset.separation", "must be finite and non-negative"));
            }
        }
        if let Some(train) = self.train_len() {
            if self.batch_size > train {
                return Err(config_error(
                    "batch_size",
                    format!("B = {} exceeds the {train} training examples", self.batch_size),
                ));
            }
        }
        let ms: Vec<usize> = match self.kind {
            ExperimentKind::SweepM => {
                let values = self.sweep_values();
                if values.is_empty() {
                    return Err(config_error("sweep.values", "must be non-empty"));
                }
                let mut ms = Vec::new();
                for v in values {
                    if !(v >= 1.0 && v.fract() == 0.0) {
                        return Err(config_error(
                            "sweep.values",
                            format!("m = {v} is not a positive integer"),
                        ));
                    }
                    ms.push(v as usize);
                }
                ms
            }
            _ => vec![self.optimizer.m],
        };
        for m in ms {
            if m > self.batch_size {
                return Err(config_error(
                    "optimizer.m",
                    format!("m = {m} exceeds B = {}", self.batch_size),
                ));
            }
            let uses_shards = matches!(self.kind, ExperimentKind::SweepM | ExperimentKind::Sharpness)
                || self.optimizer.method == Method::Msam
                || (self.kind == ExperimentKind::SweepSwitch
                    && (self.sweep.start_method == Method::Msam || self.sweep.end_method == Method::Msam));
            if uses_shards && self.strict_shards && !self.batch_size.is_multiple_of(m) {
                return Err(config_error(
                    "optimizer.m",
                    format!("strict shards need m = {m} to divide B = {}", self.batch_size),
                ));
            }
        }
        if self.kind == ExperimentKind::SweepSwitch {
            let values = self.sweep_values();
            if values.is_empty() || values.iter().any(|v| !(0.0..=100.0).contains(v)) {
                return Err(config_error("sweep.values", "switch percentages must lie in [0, 100]"));
            }
        }
        if self.sharpness.enabled && (self.sharpness.max_iters == 0 || !(self.sharpness.tol > 0.0)) {
            return Err(config_error("sharpness", "need max_iters >= 1 and tol > 0"));
        }
        Ok(())
    }

    fn validate_stability(&self) -> Result<()> {
        let s = &self.stability;
        if s.n == 0 || s.d == 0 {
            return Err(config_error("stability", "need n >= 1 and d >= 1"));
        }
        if !(s.eta > 0.0) || !(s.rho >= 0.0) {
            return Err(config_error("stability", "need eta > 0 and rho >= 0"));
        }
        let g = s.eta_grid;
        if !(g.lo > 0.0 && g.hi >= g.lo && g.points >= 1) {
            return Err(config_error("stability.eta_grid", "need 0 < lo <= hi and points >= 1"));
        }
        crate::stability::SamplingScheme {
            batch_size: s.batch_size,
            shards: s.shards,
            mode: s.mode,
        }
        .validate(s.n)
        .map_err(|e| config_error("stability", e.to_string()))
    }
}

/// Number of trailing examples held out for evaluation.
pub fn holdout_count(n: usize, fraction: f64) -> usize {
    (n as f64 * fraction).round() as usize
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ExperimentConfig::from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = ExperimentConfig::from_json(r#"{"kind": "train"}"#).unwrap();
        assert_eq!(c.batch_size, 128);
        assert_eq!(c.seeds, vec![0, 1, 2, 3, 4]);
        assert_eq!(c.optimizer, OptimizerConfig::default());
        assert_eq!(c.dataset, DatasetSpec::default());
        assert_eq!(c, ExperimentConfig::new(ExperimentKind::Train));
    }

    #[test]
    fn unknown_key_is_rejected_with_path() {
        let err = ExperimentConfig::from_json(r#"{"kind": "train", "optimizer": {"rho_per_shard": 0.1}}"#).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("optimizer") && msg.contains("rho_per_shard"), "{msg}");
        let err = ExperimentConfig::from_json(r#"{"kind": "train", "rho_per_shard": 0.1}"#).unwrap_err();
        assert!(err.to_string().contains("rho_per_shard"));
    }

    #[test]
    fn mistyped_field_names_key() {
        let err = ExperimentConfig::from_json(r#"{"kind": "train", "optimizer": {"lr": "fast"}}"#).unwrap_err();
        match err {
            Error::Config { key, message } => {
                assert_eq!(key, "optimizer.lr");
                assert!(message.contains("f64"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn m_larger_than_batch() {
        let err = ExperimentConfig::from_json(
            r#"{"kind": "train", "batch_size": 8, "optimizer": {"method": "msam", "m": 16}}"#,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config { .. }));
    }

    #[test]
    fn schedule_shapes() {
        assert_eq!(Schedule::Constant.lr_at(0.1, 7, 10), 0.1);
        let lrs: Vec<f64> = (0..100).map(|t| Schedule::OneCycle.lr_at(1.0, t, 100)).collect();
        assert_eq!(lrs[4], 1.0);
        assert!(lrs[0] < lrs[4] && lrs[99] < lrs[50]);
        assert!(lrs.iter().all(|&x| x > 0.0 && x <= 1.0));
    }

    #[test]
    fn idx_dataset_parses() {
        let c = ExperimentConfig::from_json(
            r#"{"kind": "train", "batch_size": 4, "dataset": {"generator": "idx", "images": "a.idx", "labels": "b.idx"}}"#,
        )
        .unwrap();
        assert!(matches!(c.dataset, DatasetSpec::Idx { .. }));
    }
}
