//! Config-driven experiments and report files.
//!
//! Every run is a pure function of its config and seed. A seed drives three
//! independent random streams ([`INIT_STREAM`], [`ORDER_STREAM`],
//! [`SHARD_STREAM`]), so switching the optimizer never changes the
//! initialization or the minibatch sequence.

mod config;
mod report;
mod sweep;
mod train;

use std::path::{Path, PathBuf};

use serde::Serialize;

pub use config::{
    holdout_count, parse_config, DatasetSpec, EtaGrid, ExperimentConfig, ExperimentKind, ModelConfig, Schedule,
    SharpnessConfig, StabilityConfig, SweepConfig, WARMUP_FRACTION,
};
pub use report::{
    emit_report, read_json_report, report_rows, rows_to_csv, rows_to_json, write_json, ReportFormat, ReportRow,
    CSV_HEADER,
};
pub use sweep::{sharpness_comparison, sweep, MeanStd, SharpnessComparison, SweepParameter, SweepSummary, SweepTable};
pub use train::{
    load_dataset, model_for, run_training, run_training_on, MethodPlan, StepRecord, TrainResult, INIT_STREAM,
    ORDER_STREAM, SHARD_STREAM, SHARPNESS_SEED_OFFSET,
};

use crate::error::Result;
use crate::optim::Method;
use crate::stability::{
    classify_stability, common_beta, compute_moments, log_grid, ordering_from_moments, sample_ensemble, MomentRecord,
    OrderingReport, SamplingScheme, StabilityDocument,
};

/// The stability document plus the ordering check over the config's grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityOutput {
    pub document: StabilityDocument,
    pub ordering: OrderingReport,
}

pub fn run_stability(config: &StabilityConfig) -> Result<StabilityOutput> {
    let ens = sample_ensemble(config.n, config.d, config.seed, config.kind)?;
    let scheme = SamplingScheme {
        batch_size: config.batch_size,
        shards: config.shards,
        mode: config.mode,
    };
    let moments = compute_moments(&ens, &scheme, config.rho)?;
    let fit = common_beta(&moments)?;
    let beta = fit.map(|f| f.beta);
    let reports = Method::ALL
        .into_iter()
        .map(|m| classify_stability(&moments, m, config.eta, beta))
        .collect();
    let grid = log_grid(config.eta_grid.lo, config.eta_grid.hi, config.eta_grid.points);
    Ok(StabilityOutput {
        document: StabilityDocument {
            eta: config.eta,
            fit_ratio: fit.map(|f| f.fit_ratio),
            moments: MomentRecord::from(&moments),
            reports,
        },
        ordering: ordering_from_moments(&moments, &grid)?,
    })
}

/// Files written by [`run_experiment`].
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub files: Vec<PathBuf>,
    /// One line per notable outcome, for the console.
    pub summary: Vec<String>,
}

fn fmt_mean_std(m: Option<MeanStd>) -> String {
    m.map_or_else(|| "n/a".to_string(), |m| format!("{:.4} ± {:.4}", m.mean, m.std))
}

/// Runs the experiment named by `config.kind` over `seeds` and writes its
/// reports under `out`.
pub fn run_experiment(
    config: &ExperimentConfig,
    seeds: &[u64],
    out: &Path,
    format: ReportFormat,
) -> Result<ExperimentOutput> {
    let kind = config.kind;
    let ext = format.extension();
    let mut files = Vec::new();
    let mut summary = Vec::new();
    match kind {
        ExperimentKind::Train => {
            let (train, eval) = load_dataset(config)?;
            let plan = MethodPlan::Fixed(config.optimizer.method);
            let results = seeds
                .iter()
                .map(|&s| run_training_on(config, &train, &eval, plan, s))
                .collect::<Result<Vec<_>>>()?;
            for r in &results {
                summary.push(format!(
                    "{} seed {}: final loss {}, eval acc {}, lambda_max {}",
                    r.method,
                    r.seed,
                    r.records.last().map_or(f64::NAN, |x| x.train_loss),
                    r.final_eval_acc.map_or("n/a".into(), |a| a.to_string()),
                    r.lambda_max().map_or("n/a".into(), |a| a.to_string()),
                ));
            }
            let path = out.join(format!("train.{ext}"));
            emit_report(&report_rows(kind.name(), &results), &path, format)?;
            files.push(path);
        }
        ExperimentKind::SweepM | ExperimentKind::SweepSwitch => {
            let parameter = if kind == ExperimentKind::SweepM {
                SweepParameter::M
            } else {
                SweepParameter::SwitchPercent
            };
            let table = sweep(config, parameter, &config.sweep_values(), seeds)?;
            for s in &table.summary {
                summary.push(format!(
                    "value {}: eval acc {}, lambda_max {}",
                    s.value,
                    fmt_mean_std(s.eval_acc),
                    fmt_mean_std(s.lambda_max)
                ));
            }
            let path = out.join(format!("{}.{ext}", kind.name()));
            emit_report(&report_rows(kind.name(), table.results()), &path, format)?;
            files.push(path);
            let spath = out.join(format!("{}_summary.json", kind.name()));
            write_json(&table.summary, &spath)?;
            files.push(spath);
        }
        ExperimentKind::Sharpness => {
            let cmp = sharpness_comparison(config, seeds)?;
            for (k, m) in Method::ALL.iter().enumerate() {
                summary.push(format!("{m}: mean lambda_max {}", cmp.mean_lambda_max[k]));
            }
            summary.push(format!(
                "ordering sgd >= sam >= msam holds in {}/{} seeds",
                cmp.ordered_seeds,
                cmp.seeds.len()
            ));
            let path = out.join(format!("sharpness.{ext}"));
            emit_report(&report_rows(kind.name(), cmp.runs.iter().flatten()), &path, format)?;
            files.push(path);
            let spath = out.join("sharpness_summary.json");
            write_json(
                &serde_json::json!({
                    "seeds": cmp.seeds,
                    "mean_lambda_max": {
                        "sgd": cmp.mean_lambda_max[0],
                        "sam": cmp.mean_lambda_max[1],
                        "msam": cmp.mean_lambda_max[2],
                    },
                    "ordered_seeds": cmp.ordered_seeds,
                    "means_ordered": cmp.means_ordered(),
                }),
                &spath,
            )?;
            files.push(spath);
        }
        ExperimentKind::Stability => {
            let output = run_stability(&config.stability)?;
            for r in &output.document.reports {
                summary.push(format!(
                    "{}: lambda1(J*) {}, alpha {}, verdict {}",
                    r.method, r.lambda1_jstar, r.alpha, r.verdict
                ));
            }
            summary.push(format!(
                "ordering check {}",
                if output.ordering.passed() { "passed" } else { "FAILED" }
            ));
            let path = out.join("stability.json");
            write_json(&output.document, &path)?;
            files.push(path);
            let opath = out.join("stability_ordering.json");
            write_json(&output.ordering, &opath)?;
            files.push(opath);
        }
    }
    Ok(ExperimentOutput { files, summary })
}
