use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::train::{load_dataset, run_training_on, MethodPlan, TrainResult};
use crate::error::{Error, Result};
use crate::optim::Method;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepParameter {
    /// mSAM shard count.
    M,
    /// Percentage of steps run with the start method before switching.
    SwitchPercent,
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<MeanStd> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(MeanStd { mean, std: var.sqrt() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub value: f64,
    pub eval_acc: Option<MeanStd>,
    pub lambda_max: Option<MeanStd>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
    pub seeds: Vec<u64>,
    /// `cells[i][s]` is the run for `values[i]` and `seeds[s]`.
    pub cells: Vec<Vec<TrainResult>>,
    pub summary: Vec<SweepSummary>,
}

impl SweepTable {
    pub fn results(&self) -> impl Iterator<Item = &TrainResult> {
        self.cells.iter().flatten()
    }
}

/// Runs every job on a pool of scoped threads and returns the results in job
/// order. Each job is single-threaded, so results do not depend on the pool
/// size.
fn run_cells<J, T, F>(jobs: &[J], run: F) -> Result<Vec<T>>
where
    J: Sync,
    T: Send,
    F: Fn(&J) -> Result<T> + Sync,
{
    let workers = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(jobs.len());
    if workers <= 1 {
        return jobs.iter().map(&run).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<T>>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(job) = jobs.get(i) else { break };
                let out = run(job);
                slots.lock().expect("no worker panicked")[i] = Some(out);
            });
        }
    });
    slots
        .into_inner()
        .expect("no worker panicked")
        .into_iter()
        .map(|slot| slot.expect("every job ran"))
        .collect()
}

/// Runs one training per `(value, seed)` and aggregates per value. An
/// `m`-sweep trains mSAM; a switch sweep trains the config's start method,
/// switching to its end method.
pub fn sweep(
    config: &ExperimentConfig,
    parameter: SweepParameter,
    values: &[f64],
    seeds: &[u64],
) -> Result<SweepTable> {
    if values.is_empty() || seeds.is_empty() {
        return Err(Error::invalid("a sweep needs at least one value and one seed"));
    }
    let (train, eval) = load_dataset(config)?;
    let mut jobs = Vec::with_capacity(values.len() * seeds.len());
    for &value in values {
        let mut cfg = config.clone();
        let plan = match parameter {
            SweepParameter::M => {
                if !(value >= 1.0 && value.fract() == 0.0) {
                    return Err(Error::invalid(format!("m = {value} is not a positive integer")));
                }
                cfg.optimizer.m = value as usize;
                cfg.optimizer.method = Method::Msam;
                MethodPlan::Fixed(Method::Msam)
            }
            SweepParameter::SwitchPercent => MethodPlan::Switch {
                start: config.sweep.start_method,
                end: config.sweep.end_method,
                switch_percent: value,
            },
        };
        for &seed in seeds {
            jobs.push((cfg.clone(), plan, seed));
        }
    }
    let mut flat = run_cells(&jobs, |(cfg, plan, seed)| {
        run_training_on(cfg, &train, &eval, *plan, *seed)
    })?
    .into_iter();
    let cells: Vec<Vec<TrainResult>> = values
        .iter()
        .map(|_| flat.by_ref().take(seeds.len()).collect())
        .collect();
    let summary = values
        .iter()
        .zip(&cells)
        .map(|(&value, row)| SweepSummary {
            value,
            eval_acc: MeanStd::of(&row.iter().filter_map(|r| r.final_eval_acc).collect::<Vec<_>>()),
            lambda_max: MeanStd::of(&row.iter().filter_map(TrainResult::lambda_max).collect::<Vec<_>>()),
        })
        .collect();
    Ok(SweepTable {
        parameter,
        values: values.to_vec(),
        seeds: seeds.to_vec(),
        cells,
        summary,
    })
}

/// Terminal sharpness of SGD, SAM and mSAM runs sharing every other setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharpnessComparison {
    pub seeds: Vec<u64>,
    /// Runs per method in sgd, sam, msam order, one per seed.
    pub runs: [Vec<TrainResult>; 3],
    pub mean_lambda_max: [f64; 3],
    /// Seeds where `λ_max(sgd) >= λ_max(sam) >= λ_max(msam)`.
    pub ordered_seeds: usize,
}

impl SharpnessComparison {
    pub fn means_ordered(&self) -> bool {
        self.mean_lambda_max[0] >= self.mean_lambda_max[1] && self.mean_lambda_max[1] >= self.mean_lambda_max[2]
    }
}

pub fn sharpness_comparison(config: &ExperimentConfig, seeds: &[u64]) -> Result<SharpnessComparison> {
    if seeds.is_empty() {
        return Err(Error::invalid("at least one seed is required"));
    }
    if !config.sharpness.enabled {
        return Err(Error::Config {
            key: "sharpness.enabled".into(),
            message: "the sharpness experiment needs sharpness evaluation".into(),
        });
    }
    let (train, eval) = load_dataset(config)?;
    let jobs: Vec<(ExperimentConfig, Method, u64)> = Method::ALL
        .into_iter()
        .flat_map(|method| {
            let mut cfg = config.clone();
            cfg.optimizer.method = method;
            seeds.iter().map(move |&seed| (cfg.clone(), method, seed))
        })
        .collect();
    let mut flat = run_cells(&jobs, |(cfg, method, seed)| {
        run_training_on(cfg, &train, &eval, MethodPlan::Fixed(*method), *seed)
    })?
    .into_iter();
    let runs: [Vec<TrainResult>; 3] = std::array::from_fn(|_| flat.by_ref().take(seeds.len()).collect());
    let lam = |k: usize, s: usize| runs[k][s].lambda_max().expect("sharpness enabled");
    let mean_lambda_max: [f64; 3] =
        std::array::from_fn(|k| (0..seeds.len()).map(|s| lam(k, s)).sum::<f64>() / seeds.len() as f64);
    let ordered_seeds = (0..seeds.len())
        .filter(|&s| lam(0, s) >= lam(1, s) && lam(1, s) >= lam(2, s))
        .count();
    Ok(SharpnessComparison {
        seeds: seeds.to_vec(),
        runs,
        mean_lambda_max,
        ordered_seeds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std() {
        let s = MeanStd::of(&[1.0, 3.0]).unwrap();
        assert_eq!((s.mean, s.std), (2.0, 1.0));
        assert!(MeanStd::of(&[]).is_none());
    }
}
