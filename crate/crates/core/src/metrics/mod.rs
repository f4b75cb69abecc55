//! Two-sample discrepancies between posterior sample sets, predictive
//! scores and summary tables.

mod auc;
mod c2st;
mod forest;
mod mlp;
mod mmd;
mod predictive;
mod w2;

pub use auc::roc_auc;
pub use c2st::{c2st, stratified_folds, C2stConfig, Classifier};
pub use forest::{random_forest_fit_predict, RandomForest, RfConfig};
pub use mlp::{mlp_fit_predict, mlp_loss_and_grad, MlpConfig};
pub use mmd::{median_distance, mmd, Estimator, Kernel, MmdConfig};
pub use predictive::{predictive_scores, PredictiveKind, PredictiveScore};
pub use w2::{assignment, wasserstein2};

use crate::{Error, Matrix, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

/// One metric value with its per-fold or per-dataset parts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    pub value: f64,
    pub parts: Vec<f64>,
    /// Standard error of `value` over `parts` (zero with fewer than two parts).
    pub se: f64,
    /// Short hash of the metric configuration.
    pub config_hash: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl MetricReport {
    pub fn from_parts(metric: &str, parts: Vec<f64>, config_hash: String) -> Result<Self> {
        let (value, se) = mean_se(&parts)?;
        if !value.is_finite() {
            return Err(Error::Metric(format!("{metric} is not finite")));
        }
        Ok(Self { metric: metric.to_string(), value, parts, se, config_hash, notes: Vec::new() })
    }

    pub fn single(metric: &str, value: f64, config_hash: String) -> Result<Self> {
        Self::from_parts(metric, vec![value], config_hash)
    }
}

/// Mean and standard error of the mean (sample standard deviation over `sqrt(n)`).
pub fn mean_se(x: &[f64]) -> Result<(f64, f64)> {
    if x.is_empty() {
        return Err(Error::Metric("no values to summarize".into()));
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    if x.len() < 2 {
        return Ok((mean, 0.0));
    }
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}

/// First 16 hex digits of the SHA-256 of a value's JSON form.
pub fn config_hash<S: Serialize>(cfg: &S) -> String {
    let json = serde_json::to_string(cfg).expect("configuration serializes");
    hex::encode(Sha256::digest(json.as_bytes()))[..16].to_string()
}

pub(crate) fn check_pair(a: &Matrix, b: &Matrix) -> Result<()> {
    if a.cols() != b.cols() {
        return Err(Error::Dimension(format!("sample sets of dimension {} and {}", a.cols(), b.cols())));
    }
    if a.rows() == 0 || b.rows() == 0 {
        return Err(Error::Metric("empty sample set".into()));
    }
    Ok(())
}

/// Row indices in lexicographic order of the rows, so that results that
/// depend on an rng do not depend on the input row order.
pub(crate) fn canonical_order(m: &Matrix) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..m.rows()).collect();
    idx.sort_by(|&i, &j| {
        m.row(i)
            .iter()
            .zip(m.row(j))
            .map(|(a, b)| a.total_cmp(b))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    idx
}

/// A summary-table row: mean and standard error over datasets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

/// Collapse per-dataset reports of one metric into a table row.
pub fn summarize(reports: &[MetricReport]) -> Result<SummaryRow> {
    let values: Vec<f64> = reports.iter().map(|r| r.value).collect();
    let (mean, se) = mean_se(&values)?;
    Ok(SummaryRow { mean, se, n: values.len() })
}

/// Rows whose mean is within two of their own standard errors of the best
/// mean (the lowest when `lower_is_better`).
pub fn best_equivalent(rows: &[SummaryRow], lower_is_better: bool) -> Vec<bool> {
    let best = rows
        .iter()
        .map(|r| r.mean)
        .fold(if lower_is_better { f64::INFINITY } else { f64::NEG_INFINITY }, |a, b| {
            if lower_is_better { a.min(b) } else { a.max(b) }
        });
    rows.iter().map(|r| (r.mean - best).abs() <= 2.0 * r.se).collect()
}

/// One line of a results table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub scenario: String,
    pub method: String,
    pub metric: String,
    pub value: f64,
    pub se: f64,
    pub n: usize,
    pub config_hash: String,
}

impl ReportRow {
    pub fn new(scenario: &str, method: &str, report: &MetricReport) -> Self {
        Self {
            scenario: scenario.to_string(),
            method: method.to_string(),
            metric: report.metric.clone(),
            value: report.value,
            se: report.se,
            n: report.parts.len(),
            config_hash: report.config_hash.clone(),
        }
    }
}

pub fn write_report(path: &Path, rows: &[ReportRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_report(path: &Path) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}
