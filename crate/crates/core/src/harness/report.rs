use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::train::TrainResult;
use crate::error::{Error, Result};

/// CSV header; JSON rows use the same keys.
pub const CSV_HEADER: &str = "experiment,method,m,rho,eta,seed,step,train_loss,eval_acc,lambda_max";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
        }
    }
}

/// One step of one run. `lambda_max` is filled on the final step only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportRow {
    pub experiment: String,
    pub method: String,
    pub m: usize,
    pub rho: f64,
    pub eta: f64,
    pub seed: u64,
    pub step: usize,
    pub train_loss: f64,
    pub eval_acc: Option<f64>,
    pub lambda_max: Option<f64>,
}

/// Flattens results in the order given, one row per step record.
pub fn report_rows<'a>(experiment: &str, results: impl IntoIterator<Item = &'a TrainResult>) -> Vec<ReportRow> {
    let mut rows = Vec::new();
    for r in results {
        let last = r.records.len();
        for (i, rec) in r.records.iter().enumerate() {
            rows.push(ReportRow {
                experiment: experiment.to_string(),
                method: r.method.clone(),
                m: r.m,
                rho: r.rho,
                eta: r.eta,
                seed: r.seed,
                step: rec.step,
                train_loss: rec.train_loss,
                eval_acc: rec.eval_acc,
                lambda_max: if i + 1 == last { r.lambda_max() } else { None },
            });
        }
    }
    rows
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn rows_to_csv(rows: &[ReportRow]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.experiment,
            r.method,
            r.m,
            r.rho,
            r.eta,
            r.seed,
            r.step,
            r.train_loss,
            opt(r.eval_acc),
            opt(r.lambda_max)
        )
        .expect("writing to a String");
    }
    out
}

pub fn rows_to_json(rows: &[ReportRow]) -> String {
    let mut s = serde_json::to_string_pretty(rows).expect("rows serialize");
    s.push('\n');
    s
}

/// Writes `rows` to `path`. Output depends only on the rows.
pub fn emit_report(rows: &[ReportRow], path: impl AsRef<Path>, format: ReportFormat) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::invalid("no results to report"));
    }
    let path = path.as_ref();
    let text = match format {
        ReportFormat::Csv => rows_to_csv(rows),
        ReportFormat::Json => rows_to_json(rows),
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json_report(path: impl AsRef<Path>) -> Result<Vec<ReportRow>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Writes any serializable summary as pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}
