use serde::{Deserialize, Serialize};

use super::classify::{classify_matrices, estimate_beta, StabilityReport};
use super::moments::MomentSet;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::optim::Method;

/// Row-major matrix as nested JSON arrays.
pub fn matrix_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(Error::invalid("matrix rows must be non-empty and of equal length"));
    }
    Ok(Matrix::from_fn(r, c, |i, j| rows[i][j]))
}

/// One matrix per method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerMethod {
    pub sgd: Vec<Vec<f64>>,
    pub sam: Vec<Vec<f64>>,
    pub msam: Vec<Vec<f64>>,
}

impl PerMethod {
    fn from_array(m: &[Matrix; 3]) -> Self {
        PerMethod {
            sgd: matrix_rows(&m[0]),
            sam: matrix_rows(&m[1]),
            msam: matrix_rows(&m[2]),
        }
    }

    pub fn get(&self, method: Method) -> &[Vec<f64>] {
        match method {
            Method::Sgd => &self.sgd,
            Method::Sam => &self.sam,
            Method::Msam => &self.msam,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentRecord {
    pub rho: f64,
    pub n: usize,
    pub batch_size: usize,
    pub shards: usize,
    pub draws: u64,
    pub jstar: PerMethod,
    pub sigma: PerMethod,
    pub omega: Vec<Vec<f64>>,
    pub std_error: Option<super::moments::MomentStdError>,
}

impl From<&MomentSet> for MomentRecord {
    fn from(m: &MomentSet) -> Self {
        MomentRecord {
            rho: m.rho,
            n: m.n,
            batch_size: m.batch_size,
            shards: m.shards,
            draws: m.draws,
            jstar: PerMethod::from_array(&m.jstar),
            sigma: PerMethod::from_array(&m.sigma),
            omega: matrix_rows(&m.omega),
            std_error: m.std_error,
        }
    }
}

/// Moments plus one verdict per method at a single learning rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilityDocument {
    pub eta: f64,
    pub fit_ratio: Option<f64>,
    pub moments: MomentRecord,
    pub reports: Vec<StabilityReport>,
}

/// Recomputes every verdict from the emitted `J*` and `Σ` and returns a
/// description of each disagreement; empty when the document is consistent.
pub fn verify_document(doc: &StabilityDocument) -> Result<Vec<String>> {
    let mut problems = Vec::new();
    let sgd_j = matrix_from_rows(doc.moments.jstar.get(Method::Sgd))?;
    let sgd_s = matrix_from_rows(doc.moments.sigma.get(Method::Sgd))?;
    let beta = match estimate_beta(&sgd_j, &sgd_s) {
        Ok(fit) => Some(fit.beta),
        Err(Error::UndefinedAlignment) => None,
        Err(e) => return Err(e),
    };
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0);
    for report in &doc.reports {
        let j = matrix_from_rows(doc.moments.jstar.get(report.method))?;
        let s = matrix_from_rows(doc.moments.sigma.get(report.method))?;
        let fresh = classify_matrices(report.method, &j, &s, doc.eta, beta);
        let name = report.method;
        match (fresh.beta_hat, report.beta_hat) {
            (Some(a), Some(b)) if close(a, b) => {}
            (None, None) => {}
            (a, b) => problems.push(format!("{name}: beta_hat {b:?} but recomputed {a:?}")),
        }
        if !close(fresh.alpha, report.alpha) {
            problems.push(format!("{name}: alpha {} but recomputed {}", report.alpha, fresh.alpha));
        }
        if !close(fresh.lambda1_jstar, report.lambda1_jstar) {
            problems.push(format!(
                "{name}: lambda1_jstar {} but recomputed {}",
                report.lambda1_jstar, fresh.lambda1_jstar
            ));
        }
        if !close(fresh.lambda1_sigma, report.lambda1_sigma) {
            problems.push(format!(
                "{name}: lambda1_sigma {} but recomputed {}",
                report.lambda1_sigma, fresh.lambda1_sigma
            ));
        }
        if fresh.verdict != report.verdict {
            problems.push(format!(
                "{name}: verdict {} but recomputed {}",
                report.verdict, fresh.verdict
            ));
        }
        if fresh.s1 != report.s1 || fresh.s2 != report.s2 {
            problems.push(format!("{name}: raw conditions disagree"));
        }
    }
    Ok(problems)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_round_trip() {
        let m = Matrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let rows = matrix_rows(&m);
        assert_eq!(rows[1], vec![4.0, 5.0, 6.0]);
        assert_eq!(matrix_from_rows(&rows).unwrap(), m);
        assert!(matrix_from_rows(&[vec![1.0], vec![]]).is_err());
    }
}
