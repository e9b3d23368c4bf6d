//! Datasets, minibatch iteration and micro-batch sharding.

mod idx;
mod shards;

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use idx::{parse_idx, read_idx, read_idx_labels, read_idx_pair, write_idx_images, write_idx_labels, IdxArray};
pub use shards::{make_shards, MicroBatchPlan, ShardPolicy};

/// Seeded generator for an independent stream of `seed`.
///
/// Callers use distinct stream ids for initialization, data order and shard
/// plans so that consuming one never shifts another.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Labels {
    Classes {
        labels: Vec<usize>,
        num_classes: usize,
    },
    /// Real targets, `width` per example, row-major.
    Targets {
        values: Vec<f64>,
        width: usize,
    },
    Unlabeled,
}

impl Labels {
    pub(crate) fn describe(&self) -> String {
        match self {
            Labels::Classes { num_classes, .. } => format!("{num_classes} class labels"),
            Labels::Targets { width, .. } => format!("real targets of width {width}"),
            Labels::Unlabeled => "no labels".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub n: usize,
    pub p: usize,
    pub k: Option<usize>,
    pub seed: Option<u64>,
    pub generator: String,
}

/// `n` examples with `p` features each, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Labels,
    meta: DatasetMeta,
}

impl Dataset {
    pub fn new(features: Vec<f64>, num_features: usize, labels: Labels, generator: &str) -> Result<Self> {
        if num_features == 0 || features.is_empty() || !features.len().is_multiple_of(num_features) {
            return Err(Error::invalid(format!(
                "{} feature values do not form rows of width {num_features}",
                features.len()
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                stage: "dataset features".into(),
            });
        }
        let n = features.len() / num_features;
        let k = match &labels {
            Labels::Classes { labels, num_classes } => {
                if labels.len() != n {
                    return Err(Error::invalid(format!("{} labels for {n} examples", labels.len())));
                }
                if let Some(bad) = labels.iter().find(|&&y| y >= *num_classes) {
                    return Err(Error::invalid(format!("label {bad} outside [0, {num_classes})")));
                }
                Some(*num_classes)
            }
            Labels::Targets { values, width } => {
                if *width == 0 || values.len() != n * width {
                    return Err(Error::invalid(format!(
                        "{} target values for {n} examples of width {width}",
                        values.len()
                    )));
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite {
                        stage: "dataset targets".into(),
                    });
                }
                None
            }
            Labels::Unlabeled => None,
        };
        Ok(Dataset {
            features,
            labels,
            meta: DatasetMeta {
                n,
                p: num_features,
                k,
                seed: None,
                generator: generator.to_string(),
            },
        })
    }

    pub fn from_classes(
        features: Vec<f64>,
        num_features: usize,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        Dataset::new(
            features,
            num_features,
            Labels::Classes { labels, num_classes },
            "explicit",
        )
    }

    pub fn from_targets(features: Vec<f64>, num_features: usize, targets: Vec<f64>, width: usize) -> Result<Self> {
        Dataset::new(
            features,
            num_features,
            Labels::Targets { values: targets, width },
            "explicit",
        )
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.meta.seed = Some(seed);
        self
    }

    pub fn len(&self) -> usize {
        self.meta.n
    }

    pub fn is_empty(&self) -> bool {
        self.meta.n == 0
    }

    pub fn num_features(&self) -> usize {
        self.meta.p
    }

    pub fn labels(&self) -> &Labels {
        &self.labels
    }

    pub fn meta(&self) -> &DatasetMeta {
        &self.meta
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.meta.p;
        &self.features[i * p..(i + 1) * p]
    }

    /// Features of the given examples as a `[len, p]` tensor.
    pub fn gather_features(&self, indices: &[usize]) -> Tensor {
        let mut out = Vec::with_capacity(indices.len() * self.meta.p);
        for &i in indices {
            out.extend_from_slice(self.row(i));
        }
        Tensor::raw(vec![indices.len(), self.meta.p], out)
    }

    /// One-hot class targets `[len, k]` or real targets `[len, width]`.
    pub fn gather_targets(&self, indices: &[usize]) -> Tensor {
        match &self.labels {
            Labels::Classes { labels, num_classes } => {
                let k = *num_classes;
                let mut out = vec![0.0; indices.len() * k];
                for (r, &i) in indices.iter().enumerate() {
                    out[r * k + labels[i]] = 1.0;
                }
                Tensor::raw(vec![indices.len(), k], out)
            }
            Labels::Targets { values, width } => {
                let w = *width;
                let mut out = Vec::with_capacity(indices.len() * w);
                for &i in indices {
                    out.extend_from_slice(&values[i * w..(i + 1) * w]);
                }
                Tensor::raw(vec![indices.len(), w], out)
            }
            Labels::Unlabeled => panic!("gather_targets on an unlabeled dataset"),
        }
    }

    /// New dataset with the given examples, in order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let features = self.gather_features(indices).into_values();
        let labels = match &self.labels {
            Labels::Classes { labels, num_classes } => Labels::Classes {
                labels: indices.iter().map(|&i| labels[i]).collect(),
                num_classes: *num_classes,
            },
            Labels::Targets { width, .. } => Labels::Targets {
                values: self.gather_targets(indices).into_values(),
                width: *width,
            },
            Labels::Unlabeled => Labels::Unlabeled,
        };
        Dataset {
            features,
            labels,
            meta: DatasetMeta {
                n: indices.len(),
                ..self.meta.clone()
            },
        }
    }

    /// Splits off the trailing `fraction` of examples as a held-out set.
    pub fn split_holdout(&self, fraction: f64) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(Error::invalid("holdout fraction must lie in [0, 1)"));
        }
        let n = self.len();
        let held = ((n as f64) * fraction).round() as usize;
        if held == 0 || held >= n {
            return Err(Error::invalid(format!(
                "holdout fraction {fraction} leaves an empty split of {n} examples"
            )));
        }
        let train: Vec<usize> = (0..n - held).collect();
        let eval: Vec<usize> = (n - held..n).collect();
        Ok((self.subset(&train), self.subset(&eval)))
    }

    /// CSV with header `feature_0,...,feature_{p-1},label`.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for j in 0..self.meta.p {
            let _ = write!(s, "feature_{j},");
        }
        s.push_str("label\n");
        for i in 0..self.len() {
            for v in self.row(i) {
                let _ = write!(s, "{v},");
            }
            match &self.labels {
                Labels::Classes { labels, .. } => {
                    let _ = write!(s, "{}", labels[i]);
                }
                Labels::Targets { values, width } => {
                    let parts: Vec<String> = values[i * width..(i + 1) * width]
                        .iter()
                        .map(|v| v.to_string())
                        .collect();
                    s.push_str(&parts.join(";"));
                }
                Labels::Unlabeled => {}
            }
            s.push('\n');
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// `k` Gaussian classes in `p` dimensions, `n / k` examples each.
///
/// Class means are seeded normal draws rescaled so the closest pair sits at
/// distance exactly `separation`; samples add unit-covariance noise. Rows are
/// shuffled and each feature is standardized to zero mean and unit variance.
pub fn gen_gaussian_mixture(k: usize, p: usize, n: usize, separation: f64, seed: u64) -> Result<Dataset> {
    if k < 2 {
        return Err(Error::invalid("a mixture needs at least two classes"));
    }
    if p == 0 || n == 0 || !n.is_multiple_of(k) {
        return Err(Error::invalid(format!(
            "n = {n} must be a positive multiple of k = {k}"
        )));
    }
    if !(separation >= 0.0 && separation.is_finite()) {
        return Err(Error::invalid("class separation must be non-negative"));
    }
    let mut rng = stream_rng(seed, 0);
    let mut means: Vec<f64> = (0..k * p).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let mut min_dist = f64::INFINITY;
    for a in 0..k {
        for b in a + 1..k {
            let d2 = (0..p).fold(0.0, |s, j| {
                let diff = means[a * p + j] - means[b * p + j];
                s + diff * diff
            });
            min_dist = min_dist.min(d2.sqrt());
        }
    }
    let factor = if separation == 0.0 { 0.0 } else { separation / min_dist };
    for m in means.iter_mut() {
        *m *= factor;
    }

    let mut labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    labels.shuffle(&mut rng);
    let mut features = Vec::with_capacity(n * p);
    for &y in &labels {
        for j in 0..p {
            let z: f64 = rng.sample(StandardNormal);
            features.push(means[y * p + j] + z);
        }
    }
    standardize(&mut features, p);
    let mut ds = Dataset::new(
        features,
        p,
        Labels::Classes { labels, num_classes: k },
        "gaussian-mixture",
    )?;
    ds.meta.seed = Some(seed);
    Ok(ds)
}

fn standardize(features: &mut [f64], p: usize) {
    let n = features.len() / p;
    for j in 0..p {
        let mean = (0..n).fold(0.0, |s, i| s + features[i * p + j]) / n as f64;
        let var = (0..n).fold(0.0, |s, i| {
            let d = features[i * p + j] - mean;
            s + d * d
        }) / n as f64;
        let std = if var > 0.0 { var.sqrt() } else { 1.0 };
        for i in 0..n {
            features[i * p + j] = (features[i * p + j] - mean) / std;
        }
    }
}

/// One epoch of minibatches: a seeded permutation of `0..n` cut into blocks of
/// `batch_size`, the last block possibly shorter.
pub fn epoch_batches(n: usize, batch_size: usize, rng: &mut impl Rng) -> Vec<Vec<usize>> {
    assert!(batch_size > 0, "batch size must be positive");
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size).map(|c| c.to_vec()).collect()
}
