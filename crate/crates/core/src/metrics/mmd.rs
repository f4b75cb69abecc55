use super::{check_pair, config_hash, MetricReport};
use crate::{Error, Matrix, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    /// `exp(-|x - y|^2 / (2 s^2))`
    Rbf,
    /// `exp(-|x - y| / s)`
    Exponential,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Biased,
    Unbiased,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MmdConfig {
    pub kernel: Kernel,
    /// Kernel bandwidth; `None` uses the median pairwise distance of the pooled sample.
    #[serde(default)]
    pub bandwidth: Option<f64>,
    pub estimator: Estimator,
}

impl Default for MmdConfig {
    fn default() -> Self {
        Self { kernel: Kernel::Exponential, bandwidth: None, estimator: Estimator::Unbiased }
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Median of all pairwise Euclidean distances between distinct rows.
pub fn median_distance(pool: &[&[f64]]) -> f64 {
    let n = pool.len();
    let mut d = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            d.push(dist2(pool[i], pool[j]).sqrt());
        }
    }
    if d.is_empty() {
        return 0.0;
    }
    let m = d.len() / 2;
    let (_, hi, _) = d.select_nth_unstable_by(m, f64::total_cmp);
    let hi = *hi;
    if d.len() % 2 == 1 {
        hi
    } else {
        let lo = d[..m].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lo + hi)
    }
}

/// Sum of `k(x_i, y_j)` over all pairs, skipping `i == j` when `skip_diag`.
fn block(x: &Matrix, y: &Matrix, k: &impl Fn(f64) -> f64, skip_diag: bool) -> f64 {
    let mut s = 0.0;
    for i in 0..x.rows() {
        let mut row = 0.0;
        for j in 0..y.rows() {
            if !(skip_diag && i == j) {
                row += k(dist2(x.row(i), y.row(j)));
            }
        }
        s += row;
    }
    s
}

/// Squared maximum mean discrepancy between two sample sets.
pub fn mmd(a: &Matrix, b: &Matrix, cfg: &MmdConfig) -> Result<MetricReport> {
    check_pair(a, b)?;
    let (n, m) = (a.rows() as f64, b.rows() as f64);
    if cfg.estimator == Estimator::Unbiased && (a.rows() < 2 || b.rows() < 2) {
        return Err(Error::Metric("unbiased MMD needs at least two points per set".into()));
    }
    let s = match cfg.bandwidth {
        Some(s) if s > 0.0 => s,
        Some(s) => return Err(Error::Metric(format!("bandwidth must be positive, got {s}"))),
        None => {
            let pool: Vec<&[f64]> = a.iter_rows().chain(b.iter_rows()).collect();
            let med = median_distance(&pool);
            if !(med > 0.0) {
                return Err(Error::Metric("degenerate bandwidth: median pairwise distance is zero".into()));
            }
            med
        }
    };
    let kernel = cfg.kernel;
    let k = move |d2: f64| match kernel {
        Kernel::Rbf => (-d2 / (2.0 * s * s)).exp(),
        Kernel::Exponential => (-d2.sqrt() / s).exp(),
    };
    let value = match cfg.estimator {
        Estimator::Biased => {
            block(a, a, &k, false) / (n * n) + block(b, b, &k, false) / (m * m) - 2.0 * block(a, b, &k, false) / (n * m)
        }
        Estimator::Unbiased => {
            block(a, a, &k, true) / (n * (n - 1.0)) + block(b, b, &k, true) / (m * (m - 1.0))
                - 2.0 * block(a, b, &k, false) / (n * m)
        }
    };
    let mut report = MetricReport::single("mmd", value, config_hash(cfg))?;
    if cfg.bandwidth.is_none() {
        report.notes.push(format!("median bandwidth {s}"));
    }
    Ok(report)
}
