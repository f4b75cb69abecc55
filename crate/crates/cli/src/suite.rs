//! Benchmark suites: generate datasets, run every method on every dataset,
//! compare against a reference method and summarize.

use std::path::{Path, PathBuf};

use clap::Args;
use ctxflow::infer::{reference_samples, Method, ReferenceConfig};
use ctxflow::metrics::{best_equivalent, summarize, MetricReport};
use ctxflow::{SampleSet, SolverConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::commands::{compare, icl_samples, load_model, Backend, MetricName};
use crate::data::{generate, resolve_scenario};
use crate::failure::{CliResult, Failure};
use crate::manifest::{manifest_path, ManifestBuilder, RunManifest};

/// Environment variable holding the worker count.
pub const WORKERS_ENV: &str = "CTXFLOW_WORKERS";

fn default_n_draws() -> usize {
    1000
}

fn default_metrics() -> Vec<MetricName> {
    vec![MetricName::C2st, MetricName::Mmd, MetricName::W2]
}

fn default_backend() -> Backend {
    Backend::Rf
}

fn default_kde_points() -> usize {
    128
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Suite {
    pub scenario: String,
    pub n_datasets: usize,
    /// Reference method names, plus `icl` for the trained model.
    pub methods: Vec<String>,
    /// Method the others are compared against; `analytic` when listed,
    /// else the first method.
    #[serde(default)]
    pub reference: Option<String>,
    /// Checkpoint for `icl`, relative to the suite file.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    #[serde(default = "default_n_draws")]
    pub n_draws: usize,
    #[serde(default = "default_metrics")]
    pub metrics: Vec<MetricName>,
    #[serde(default = "default_backend")]
    pub c2st_backend: Backend,
    #[serde(default)]
    pub reference_config: ReferenceConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_kde_points")]
    pub kde_points: usize,
}

impl Suite {
    pub fn reference_method(&self) -> String {
        self.reference.clone().unwrap_or_else(|| {
            if self.methods.iter().any(|m| m == "analytic") {
                "analytic".into()
            } else {
                self.methods.first().cloned().unwrap_or_default()
            }
        })
    }
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct BenchmarkArgs {
    #[arg(long)]
    pub suite: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellStatus {
    pub dataset: usize,
    pub method: String,
    pub status: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryLine {
    pub scenario: String,
    pub method: String,
    pub metric: String,
    pub mean: f64,
    pub se: f64,
    pub n: usize,
    /// Within two standard errors of the best method for this metric.
    pub best: bool,
}

#[derive(Debug)]
pub struct BenchmarkOutcome {
    pub manifest: RunManifest,
    pub cells: Vec<CellStatus>,
    pub summary: Vec<SummaryLine>,
}

impl BenchmarkOutcome {
    pub fn failed(&self) -> usize {
        self.cells.iter().filter(|c| c.status != "OK").count()
    }
}

/// Gaussian kernel density of each column on an evenly spaced grid
/// (Silverman bandwidth). Rows are `(column, x, density)`.
pub fn kde_grid(s: &SampleSet, points: usize) -> Vec<(usize, f64, f64)> {
    let mut out = Vec::with_capacity(points * s.dim());
    let n = s.n() as f64;
    for c in 0..s.dim() {
        let mut col = s.draws.column(c);
        col.sort_by(f64::total_cmp);
        let mean = col.iter().sum::<f64>() / n;
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
        let q = |p: f64| col[((p * (n - 1.0)).round() as usize).min(col.len() - 1)];
        let iqr = q(0.75) - q(0.25);
        let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
        let h = (0.9 * spread * n.powf(-0.2)).max(1e-12);
        let (lo, hi) = (col[0] - 3.0 * h, col[col.len() - 1] + 3.0 * h);
        let norm = 1.0 / (n * h * (2.0 * std::f64::consts::PI).sqrt());
        for g in 0..points {
            let x = lo + (hi - lo) * g as f64 / (points.max(2) - 1) as f64;
            let d: f64 = col.iter().map(|v| (-0.5 * ((x - v) / h).powi(2)).exp()).sum();
            out.push((c, x, d * norm));
        }
    }
    out
}

fn write_kde(path: &Path, s: &SampleSet, points: usize) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(ctxflow::Error::from)?;
    w.write_record(["coordinate", "x", "density"]).map_err(ctxflow::Error::from)?;
    for (c, x, d) in kde_grid(s, points) {
        w.write_record([s.names[c].clone(), format!("{x:?}"), format!("{d:?}")]).map_err(ctxflow::Error::from)?;
    }
    w.flush()?;
    Ok(())
}

fn write_rows<S: Serialize>(path: &Path, rows: &[S]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(ctxflow::Error::from)?;
    for r in rows {
        w.serialize(r).map_err(ctxflow::Error::from)?;
    }
    w.flush()?;
    Ok(())
}

pub fn worker_count() -> CliResult<Option<usize>> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => v
            .parse::<usize>()
            .ok()
            .filter(|n| *n > 0)
            .map(Some)
            .ok_or_else(|| Failure::config(format!("{WORKERS_ENV} must be a positive integer, got `{v}`"))),
        Err(_) => Ok(None),
    }
}

pub fn benchmark_cmd(a: &BenchmarkArgs) -> CliResult<BenchmarkOutcome> {
    let text = std::fs::read_to_string(&a.suite)
        .map_err(|e| Failure::config(format!("cannot read {}: {e}", a.suite.display())))?;
    let suite: Suite = serde_json::from_str(&text).map_err(|e| Failure::config(format!("suite: {e}")))?;
    let (id, scenario) = resolve_scenario(&suite.scenario)?;
    if suite.n_datasets == 0 || suite.methods.is_empty() {
        return Err(Failure::config("a suite needs at least one dataset and one method"));
    }
    suite.solver.validate()?;
    let reference = suite.reference_method();
    for dir in ["samples", "kde"] {
        std::fs::create_dir_all(a.out.join(dir))?;
    }
    let loc = manifest_path(&a.out, true);
    let mut m = ManifestBuilder::new("benchmark", serde_json::to_value(&suite)?, vec![suite.seed], &loc);
    m.input(&a.suite)?;
    let ckpt = suite.checkpoint.as_ref().map(|p| a.suite.parent().unwrap_or(Path::new(".")).join(p));
    if let Some(p) = ckpt.as_ref().filter(|p| p.exists()) {
        m.input(p)?;
    }

    let data = generate(&id, &scenario, suite.n_datasets, suite.seed)?;
    data.write(&a.out.join("datasets.bin"))?;
    m.phase("generate");

    let icl = match (&ckpt, suite.methods.iter().any(|s| s == "icl")) {
        (Some(p), true) => Some(load_model(p).map_err(|e| e.message)),
        (None, true) => Some(Err("method icl needs a checkpoint".to_string())),
        _ => None,
    };
    let cells: Vec<(usize, String)> =
        (0..suite.n_datasets).flat_map(|i| suite.methods.iter().map(move |mth| (i, mth.clone()))).collect();
    let run_cell = |(i, method): &(usize, String)| -> Result<SampleSet, String> {
        let seed = suite.seed.wrapping_mul(1_000_003).wrapping_add(*i as u64);
        let d = &data.datasets[*i];
        if method == "icl" {
            let (model, flow, _) = icl.as_ref().expect("icl requested").as_ref().map_err(Clone::clone)?;
            return icl_samples(model, flow, Some(&scenario), &d.rows, suite.n_draws, &suite.solver, seed)
                .map_err(|e| e.message);
        }
        let mth: Method = method.parse().map_err(|e: ctxflow::Error| e.to_string())?;
        let rc = ReferenceConfig { n_draws: suite.n_draws, seed, ..suite.reference_config.clone() };
        reference_samples(mth, &scenario, d, &rc).map_err(|e| e.to_string())
    };
    let results: Vec<Result<SampleSet, String>> = match worker_count()? {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Failure::config(e.to_string()))?
            .install(|| cells.par_iter().map(run_cell).collect()),
        None => cells.par_iter().map(run_cell).collect(),
    };
    m.phase("sample");

    let mut status = Vec::with_capacity(cells.len());
    let mut sets: Vec<Option<SampleSet>> = Vec::with_capacity(cells.len());
    for ((i, method), r) in cells.iter().zip(results) {
        match r {
            Ok(s) => {
                let path = a.out.join("samples").join(format!("{method}_{i:03}.csv"));
                s.write(&path)?;
                m.output(&path)?;
                let kde = a.out.join("kde").join(format!("{method}_{i:03}.csv"));
                write_kde(&kde, &s, suite.kde_points)?;
                m.output(&kde)?;
                status.push(CellStatus { dataset: *i, method: method.clone(), status: "OK".into(), message: String::new() });
                sets.push(Some(s));
            }
            Err(e) => {
                log::error!("dataset {i}, method {method}: {e}");
                status.push(CellStatus { dataset: *i, method: method.clone(), status: "FAILED".into(), message: e });
                sets.push(None);
            }
        }
    }
    let n_methods = suite.methods.len();
    let ref_col = suite.methods.iter().position(|x| *x == reference);

    #[derive(Serialize)]
    struct MetricLine {
        dataset: usize,
        method: String,
        metric: String,
        value: f64,
        se: f64,
        config_hash: String,
    }
    let mut lines = Vec::new();
    let mut per_method: Vec<Vec<Vec<MetricReport>>> = vec![vec![Vec::new(); suite.metrics.len()]; n_methods];
    if let Some(rc) = ref_col {
        for i in 0..suite.n_datasets {
            let Some(r) = &sets[i * n_methods + rc] else { continue };
            for (mc, method) in suite.methods.iter().enumerate() {
                if mc == rc {
                    continue;
                }
                let Some(s) = &sets[i * n_methods + mc] else { continue };
                let seed = suite.seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
                match compare(&s.draws, &r.draws, &suite.metrics, suite.c2st_backend, seed) {
                    Ok(reports) => {
                        for (k, rep) in reports.into_iter().enumerate() {
                            lines.push(MetricLine {
                                dataset: i,
                                method: method.clone(),
                                metric: rep.metric.clone(),
                                value: rep.value,
                                se: rep.se,
                                config_hash: rep.config_hash.clone(),
                            });
                            per_method[mc][k].push(rep);
                        }
                    }
                    Err(e) => {
                        let cell = &mut status[i * n_methods + mc];
                        cell.status = "FAILED".into();
                        cell.message = format!("metrics: {}", e.message);
                    }
                }
            }
        }
    } else {
        for c in status.iter_mut() {
            c.status = "FAILED".into();
            c.message = format!("reference method `{reference}` is not in the suite");
        }
    }
    m.phase("metrics");

    let mut summary = Vec::new();
    for (k, metric) in suite.metrics.iter().enumerate() {
        let rows: Vec<(String, ctxflow::metrics::SummaryRow)> = suite
            .methods
            .iter()
            .enumerate()
            .filter_map(|(mc, name)| summarize(&per_method[mc][k]).ok().map(|r| (name.clone(), r)))
            .collect();
        let best = best_equivalent(&rows.iter().map(|(_, r)| r.clone()).collect::<Vec<_>>(), true);
        for ((method, r), b) in rows.into_iter().zip(best) {
            summary.push(SummaryLine {
                scenario: id.clone(),
                method,
                metric: serde_json::to_value(metric)?.as_str().unwrap_or_default().to_string(),
                mean: r.mean,
                se: r.se,
                n: r.n,
                best: b,
            });
        }
    }
    for (name, rows) in [("metrics.csv", None), ("summary.csv", Some(&summary))] {
        let path = a.out.join(name);
        match rows {
            None => write_rows(&path, &lines)?,
            Some(s) => write_rows(&path, s)?,
        }
        m.output(&path)?;
    }
    let status_path = a.out.join("status.csv");
    write_rows(&status_path, &status)?;
    m.output(&status_path)?;
    m.output(&a.out.join("datasets.bin"))?;
    m.phase("report");
    Ok(BenchmarkOutcome { manifest: m.finish(&loc)?, cells: status, summary })
}
