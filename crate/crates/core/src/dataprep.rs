//! Ingestion and preprocessing of tabular regression data: standardization,
//! Yeo-Johnson power transform, feature selection and target scaling to a
//! scenario's prior-predictive moments.

use crate::probmodels::{sample_dataset, ContextDataset, Family, ScenarioConfig};
use crate::rng::{seeded, stream};
use crate::{Error, Matrix, Result};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;

/// Dense numeric table with column names.
#[derive(Clone, Debug, PartialEq)]
pub struct RawTable {
    pub names: Vec<String>,
    pub data: Matrix,
    /// Rows dropped for missing values.
    pub dropped_rows: usize,
}

impl RawTable {
    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Config(format!("no column named `{name}`")))
    }
}

fn is_missing(field: &str) -> bool {
    matches!(field.trim().to_ascii_lowercase().as_str(), "" | "na" | "nan" | "null" | "?")
}

/// Read a headed numeric CSV. Rows with a missing field are dropped and
/// counted; any other unparsable field is an error naming its line.
pub fn load_csv(path: &Path) -> Result<RawTable> {
    let mut r = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
    let names: Vec<String> = r.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let mut data = Vec::new();
    let (mut rows, mut dropped) = (0, 0);
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map_or(i + 2, |p| p.line() as usize);
        if rec.len() != names.len() {
            return Err(Error::Parse { line, reason: format!("{} fields, header has {}", rec.len(), names.len()) });
        }
        if rec.iter().any(is_missing) {
            dropped += 1;
            continue;
        }
        for f in rec.iter() {
            let v: f64 = f.trim().parse().map_err(|_| Error::Parse { line, reason: format!("not a number: {f:?}") })?;
            data.push(v);
        }
        rows += 1;
    }
    if dropped > 0 {
        log::info!("dropped {dropped} rows with missing values from {}", path.display());
    }
    Ok(RawTable { data: Matrix::from_vec(rows, names.len(), data), names, dropped_rows: dropped })
}

pub fn write_csv(path: &Path, names: &[String], data: &Matrix) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(names)?;
    for row in data.iter_rows() {
        w.write_record(row.iter().map(|v| format!("{v:?}")))?;
    }
    w.flush()?;
    Ok(())
}

/// Per-column affine standardization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    /// Input columns kept, in order.
    pub kept: Vec<usize>,
    /// Input columns dropped for having zero variance.
    pub dropped: Vec<usize>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl ColumnStats {
    pub fn apply(&self, m: &Matrix) -> Result<Matrix> {
        let need = self.kept.iter().max().map_or(0, |&c| c + 1);
        if m.cols() < need {
            return Err(Error::Dimension(format!("{} columns, standardization needs {need}", m.cols())));
        }
        let mut out = m.select_cols(&self.kept);
        for r in 0..out.rows() {
            for (c, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = (*v - self.means[c]) / self.stds[c];
            }
        }
        Ok(out)
    }

    /// Map standardized values back to the kept input columns.
    pub fn invert(&self, m: &Matrix) -> Matrix {
        let mut out = m.clone();
        for r in 0..out.rows() {
            for (c, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = *v * self.stds[c] + self.means[c];
            }
        }
        out
    }
}

/// Zero mean and unit (population) variance per column. Constant columns
/// are dropped and listed in the record.
pub fn standardize(m: &Matrix) -> Result<(Matrix, ColumnStats)> {
    let n = m.rows() as f64;
    if m.rows() == 0 {
        return Err(Error::Domain("cannot standardize an empty matrix".into()));
    }
    let mut stats = ColumnStats { kept: Vec::new(), dropped: Vec::new(), means: Vec::new(), stds: Vec::new() };
    for c in 0..m.cols() {
        let col = m.column(c);
        let mean = col.iter().sum::<f64>() / n;
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        if sd > 0.0 && sd.is_finite() {
            stats.kept.push(c);
            stats.means.push(mean);
            stats.stds.push(sd);
        } else {
            stats.dropped.push(c);
        }
    }
    if stats.kept.is_empty() {
        return Err(Error::Domain("every column is constant".into()));
    }
    if !stats.dropped.is_empty() {
        log::warn!("dropped constant columns {:?}", stats.dropped);
    }
    Ok((stats.apply(m)?, stats))
}

/// Yeo-Johnson transform of one value.
pub fn yeo_johnson_value(y: f64, lambda: f64) -> f64 {
    const EPS: f64 = 1e-12;
    if y >= 0.0 {
        if lambda.abs() < EPS {
            y.ln_1p()
        } else {
            ((y + 1.0).powf(lambda) - 1.0) / lambda
        }
    } else if (lambda - 2.0).abs() < EPS {
        -(-y).ln_1p()
    } else {
        -((1.0 - y).powf(2.0 - lambda) - 1.0) / (2.0 - lambda)
    }
}

pub fn yeo_johnson_with(y: &[f64], lambda: f64) -> Vec<f64> {
    y.iter().map(|&v| yeo_johnson_value(v, lambda)).collect()
}

/// Profile Gaussian log-likelihood of `lambda`.
fn yj_profile(y: &[f64], lambda: f64) -> f64 {
    let n = y.len() as f64;
    let t = yeo_johnson_with(y, lambda);
    let mean = t.iter().sum::<f64>() / n;
    let var = t.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let jac: f64 = y.iter().map(|&v| v.signum() * v.abs().ln_1p()).sum();
    -0.5 * n * var.ln() + (lambda - 1.0) * jac
}

/// Transform `y` with the `lambda` in `[-5, 5]` maximizing the profile
/// likelihood (golden-section search to `1e-6`).
pub fn yeo_johnson(y: &[f64]) -> Result<(Vec<f64>, f64)> {
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("Yeo-Johnson needs finite inputs".into()));
    }
    if y.len() < 2 || y.iter().all(|&v| v == y[0]) {
        return Ok((yeo_johnson_with(y, 1.0), 1.0));
    }
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let f = |l: f64| {
        let v = yj_profile(y, l);
        if v.is_nan() { f64::NEG_INFINITY } else { v }
    };
    let (mut a, mut b) = (-5.0, 5.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > 1e-6 {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    let lambda = 0.5 * (a + b);
    Ok((yeo_johnson_with(y, lambda), lambda))
}

/// Number of distinct values in each column (`-0.0` counts as `0.0`).
pub fn distinct_counts(m: &Matrix) -> Vec<usize> {
    (0..m.cols())
        .map(|c| {
            let mut col: Vec<f64> = m.column(c).into_iter().map(|v| if v == 0.0 { 0.0 } else { v }).collect();
            col.sort_by(f64::total_cmp);
            col.dedup_by(|a, b| a.total_cmp(b).is_eq());
            col.len()
        })
        .collect()
}

/// The `p` columns with the most distinct values, ties going to the lower
/// index, returned in ascending index order.
pub fn select_features(m: &Matrix, p: usize) -> Result<Vec<usize>> {
    if p > m.cols() {
        return Err(Error::Config(format!("cannot select {p} features from {} columns", m.cols())));
    }
    let counts = distinct_counts(m);
    let mut idx: Vec<usize> = (0..m.cols()).collect();
    idx.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    let mut out = idx[..p].to_vec();
    out.sort_unstable();
    Ok(out)
}

/// Default Monte Carlo size for prior-predictive target moments.
pub const PRIOR_DRAWS: usize = 100_000;

type MomentKey = (String, usize, u64);
static MOMENTS: Mutex<Option<HashMap<MomentKey, (f64, f64)>>> = Mutex::new(None);

/// Mean and variance of a single response under the scenario's prior
/// predictive, from `draws` independent (parameter, covariate) draws.
/// Results are cached per scenario, size and seed.
pub fn implied_target_moments(cfg: &ScenarioConfig, draws: usize, seed: u64) -> Result<(f64, f64)> {
    if cfg.family != Family::GLM {
        return Err(Error::Unsupported("implied target moments need a GLM scenario".into()));
    }
    if draws < 2 {
        return Err(Error::Config("need at least two prior draws".into()));
    }
    let key = (cfg.to_json()?, draws, seed);
    if let Some(v) = MOMENTS.lock().expect("cache lock").as_ref().and_then(|m| m.get(&key)) {
        return Ok(*v);
    }
    let one = ScenarioConfig { k: 1, ..cfg.clone() };
    let mut rng = seeded(seed);
    let mut ys = Vec::with_capacity(draws);
    for _ in 0..draws {
        let (data, _) = sample_dataset(&one, &mut rng)?;
        ys.push(data.rows.get(0, cfg.p));
    }
    let n = draws as f64;
    let mean = ys.iter().sum::<f64>() / n;
    let var = ys.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    MOMENTS.lock().expect("cache lock").get_or_insert_with(HashMap::new).insert(key, (mean, var));
    Ok((mean, var))
}

/// Affine map `y -> scale * y + shift` of the target.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetScale {
    pub scale: f64,
    pub shift: f64,
    pub target_mean: f64,
    pub target_var: f64,
}

impl TargetScale {
    pub fn apply(&self, y: &[f64]) -> Vec<f64> {
        y.iter().map(|v| self.scale * v + self.shift).collect()
    }
}

/// Rescale `y` so its sample mean and variance match the scenario's
/// prior-predictive response moments.
pub fn scale_target_to_prior(y: &[f64], cfg: &ScenarioConfig, draws: usize, seed: u64) -> Result<(Vec<f64>, TargetScale)> {
    let n = y.len() as f64;
    if y.len() < 2 {
        return Err(Error::Domain("need at least two target values".into()));
    }
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if !(var > 0.0) {
        return Err(Error::Domain("target has zero variance".into()));
    }
    let (target_mean, target_var) = implied_target_moments(cfg, draws, seed)?;
    let scale = (target_var / var).sqrt();
    let rec = TargetScale { scale, shift: target_mean - scale * mean, target_mean, target_var };
    Ok((rec.apply(y), rec))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrepConfig {
    pub target: String,
    /// Number of features kept.
    pub p: usize,
    /// Rows kept after transformation; `None` keeps all.
    #[serde(default)]
    pub n_rows: Option<usize>,
    /// Power-transform and rescale the target (off for binary responses).
    pub transform_target: bool,
    pub prior_draws: usize,
    pub seed: u64,
}

/// Everything needed to replay preprocessing on the same raw table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessRecord {
    pub target_column: usize,
    pub selected: Vec<usize>,
    pub feature_names: Vec<String>,
    pub features: ColumnStats,
    pub yj_lambda: Option<f64>,
    pub target: Option<TargetScale>,
    /// Row indices kept, in order, and the seed that chose them.
    pub rows: Option<Vec<usize>>,
    pub subsample_seed: u64,
}

/// Select features, standardize them, transform and rescale the target,
/// then subsample rows. Returns a GLM dataset `[x_1..x_p, y]`.
pub fn preprocess(table: &RawTable, cfg: &PrepConfig, scenario: &ScenarioConfig) -> Result<(ContextDataset, PreprocessRecord)> {
    let t = table.column_index(&cfg.target)?;
    let others: Vec<usize> = (0..table.names.len()).filter(|&c| c != t).collect();
    let x_all = table.data.select_cols(&others);
    let local = select_features(&x_all, cfg.p)?;
    let selected: Vec<usize> = local.iter().map(|&c| others[c]).collect();
    let (_, features) = standardize(&table.data.select_cols(&selected))?;
    if !features.dropped.is_empty() {
        return Err(Error::Domain(format!("selected features {:?} are constant", features.dropped)));
    }
    let y = table.data.column(t);
    let (yj_lambda, target) = if cfg.transform_target {
        let (yt, lambda) = yeo_johnson(&y)?;
        let (_, rec) = scale_target_to_prior(&yt, scenario, cfg.prior_draws, cfg.seed)?;
        (Some(lambda), Some(rec))
    } else {
        (None, None)
    };
    let rows = match cfg.n_rows {
        Some(k) if k > table.data.rows() => {
            return Err(Error::Config(format!("asked for {k} rows, table has {}", table.data.rows())));
        }
        Some(k) => {
            let mut idx = sample(&mut stream(cfg.seed, 1), table.data.rows(), k).into_vec();
            idx.sort_unstable();
            Some(idx)
        }
        None => None,
    };
    let record = PreprocessRecord {
        target_column: t,
        feature_names: selected.iter().map(|&c| table.names[c].clone()).collect(),
        selected,
        features,
        yj_lambda,
        target,
        rows,
        subsample_seed: cfg.seed,
    };
    Ok((apply_record(table, &record)?, record))
}

/// Replay a stored preprocessing on a raw table.
pub fn apply_record(table: &RawTable, rec: &PreprocessRecord) -> Result<ContextDataset> {
    if rec.target_column >= table.data.cols() {
        return Err(Error::Dimension(format!("target column {} out of range", rec.target_column)));
    }
    let x = rec.features.apply(&table.data.select_cols(&rec.selected))?;
    let mut y = table.data.column(rec.target_column);
    if let Some(l) = rec.yj_lambda {
        y = yeo_johnson_with(&y, l);
    }
    if let Some(s) = rec.target {
        y = s.apply(&y);
    }
    let p = rec.selected.len();
    let idx: Vec<usize> = rec.rows.clone().unwrap_or_else(|| (0..table.data.rows()).collect());
    let mut out = Matrix::zeros(idx.len(), p + 1);
    for (r, &i) in idx.iter().enumerate() {
        let row = out.row_mut(r);
        row[..p].copy_from_slice(x.row(i));
        row[p] = y[i];
    }
    Ok(ContextDataset::new(out, Family::GLM))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probmodels::distributions::std_normal;
    use proptest::prelude::*;
    use rand::Rng;
    use std::collections::HashSet;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn csv_loading() {
        let dir = tempfile::tempdir().unwrap();
        let t = load_csv(&write(&dir, "h.csv", "a,b,c\n")).unwrap();
        assert_eq!((t.data.rows(), t.names.len()), (0, 3));
        let t = load_csv(&write(&dir, "m.csv", "a,b\n1,2\nNA,3\n4,\n5,6\n")).unwrap();
        assert_eq!(t.data.data(), &[1.0, 2.0, 5.0, 6.0]);
        assert_eq!(t.dropped_rows, 2);
        match load_csv(&write(&dir, "bad.csv", "a,b\n1,2\n3,abc\n")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let path = dir.path().join("rt.csv");
        let m = Matrix::from_vec(2, 2, vec![0.1, -3e-9, 1.0 / 7.0, 12345.678]);
        let names = vec!["x".to_string(), "y".to_string()];
        write_csv(&path, &names, &m).unwrap();
        let back = load_csv(&path).unwrap();
        assert_eq!((back.names, back.data), (names, m));
    }

    #[test]
    fn column_means_of_a_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let body = "x1,x2,y\n1.5,10,-2\n2.5,20,0\n3.0,30,4\n-1.0,40,1\n4.0,50,2.5\n";
        let t = load_csv(&write(&dir, "f.csv", body)).unwrap();
        // hand totals: 10.0 / 5, 150 / 5, 5.5 / 5
        let (_, stats) = standardize(&t.data).unwrap();
        assert_eq!(stats.means, vec![2.0, 30.0, 1.1]);
    }

    #[test]
    fn standardization() {
        let (z, s) = standardize(&Matrix::from_vec(2, 1, vec![0.0, 2.0])).unwrap();
        assert_eq!(z.data(), &[-1.0, 1.0]);
        assert_eq!((s.means[0], s.stds[0]), (1.0, 1.0));
        let mut rng = seeded(1);
        let raw = Matrix::from_vec(50, 3, (0..150).map(|_| 3.0 + 2.0 * std_normal(&mut rng)).collect());
        let (z, s) = standardize(&raw).unwrap();
        let back = s.invert(&z);
        for (a, b) in back.data().iter().zip(raw.data()) {
            assert!((a - b).abs() <= 1e-12);
        }
        let (z2, _) = standardize(&z).unwrap();
        for (a, b) in z2.data().iter().zip(z.data()) {
            assert!((a - b).abs() <= 1e-12);
        }
        let with_const = Matrix::from_vec(3, 2, vec![1.0, 5.0, 2.0, 5.0, 3.0, 5.0]);
        let (z, s) = standardize(&with_const).unwrap();
        assert_eq!((z.cols(), s.dropped.clone()), (1, vec![1]));
        assert!(standardize(&Matrix::filled(3, 2, 1.0)).is_err());
    }

    #[test]
    fn yeo_johnson_branches() {
        for y in [-3.0, -0.5, 0.0, 0.7, 12.0] {
            assert!((yeo_johnson_value(y, 1.0) - y).abs() < 1e-15);
        }
        assert!((yeo_johnson_value(std::f64::consts::E - 1.0, 0.0) - 1.0).abs() < 1e-15);
        assert!((yeo_johnson_value(-1.0, 2.0) + 2f64.ln()).abs() < 1e-15);
        assert!((yeo_johnson_value(-1.0, 2.0) - -0.693147).abs() < 1e-6);
    }

    #[test]
    fn yeo_johnson_recovers_a_planted_lambda() {
        // invert the transform on Gaussian draws; the fit should find lambda again
        let inverse = |t: f64, l: f64| {
            if t >= 0.0 {
                (l * t + 1.0).powf(1.0 / l) - 1.0
            } else {
                1.0 - (1.0 - (2.0 - l) * t).powf(1.0 / (2.0 - l))
            }
        };
        let mut rng = seeded(2);
        for lambda in [0.5, 1.5] {
            let y: Vec<f64> = (0..5000).map(|_| inverse(0.5 * std_normal(&mut rng), lambda)).collect();
            let (_, est) = yeo_johnson(&y).unwrap();
            assert!((est - lambda).abs() < 0.1, "{est} vs {lambda}");
        }
    }

    proptest! {
        #[test]
        fn yeo_johnson_is_strictly_monotone(lambda in -5.0f64..5.0, a in -50.0f64..50.0, b in -50.0f64..50.0) {
            prop_assume!(a < b);
            prop_assert!(yeo_johnson_value(a, lambda) < yeo_johnson_value(b, lambda));
        }
    }

    #[test]
    fn monotone_on_many_random_inputs() {
        let mut rng = seeded(3);
        let mut y: Vec<f64> = (0..10_000).map(|_| 5.0 * std_normal(&mut rng)).collect();
        y.sort_by(f64::total_cmp);
        y.dedup();
        for lambda in [-5.0, -1.0, 0.0, 0.3, 1.0, 2.0, 3.7, 5.0] {
            let t = yeo_johnson_with(&y, lambda);
            assert!(t.windows(2).all(|w| w[0] < w[1]), "lambda {lambda}");
        }
    }

    #[test]
    fn feature_selection() {
        let mut rng = seeded(4);
        let n = 30;
        let cont = |rng: &mut crate::rng::StreamRng| (0..n).map(|_| rng.random::<f64>()).collect::<Vec<_>>();
        let binary: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
        let cols = [binary.clone(), cont(&mut rng), binary, cont(&mut rng)];
        let m = Matrix::from_vec(n, 4, (0..n).flat_map(|r| cols.iter().map(move |c| c[r])).collect());
        assert_eq!(select_features(&m, 2).unwrap(), vec![1, 3]);
        assert_eq!(select_features(&m, 3).unwrap(), vec![0, 1, 3]);
        let all = Matrix::from_vec(n, 3, cont(&mut rng).into_iter().chain(cont(&mut rng)).chain(cont(&mut rng)).collect());
        assert_eq!(select_features(&all, 2).unwrap(), vec![0, 1]);
        assert!(select_features(&m, 5).is_err());
        let coarse = Matrix::from_vec(40, 2, (0..80).map(|_| (rng.random::<f64>() * 7.0).floor() - 3.0).collect());
        let counts = distinct_counts(&coarse);
        for c in 0..2 {
            let set: HashSet<u64> = coarse.column(c).iter().map(|v| v.to_bits()).collect();
            assert_eq!(counts[c], set.len());
        }
    }

    #[test]
    fn implied_moments_of_the_conjugate_glm() {
        let cfg = ScenarioConfig::by_id("glm-1").unwrap();
        let (m1, v1) = implied_target_moments(&cfg, PRIOR_DRAWS, 1).unwrap();
        let (m2, v2) = implied_target_moments(&cfg, PRIOR_DRAWS, 2).unwrap();
        assert!(m1.abs() < 4.0 * (v1 / PRIOR_DRAWS as f64).sqrt(), "mean {m1}");
        assert!((v1 - v2).abs() / v1 < 0.02, "{v1} vs {v2}");
        let _ = m2;
        let y: Vec<f64> = (0..200).map(|i| ((i as f64) * 0.1).sin()).collect();
        let mean = y.iter().sum::<f64>() / 200.0;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 199.0;
        let shifted: Vec<f64> = y.iter().map(|v| (v - mean) / var.sqrt() * v1.sqrt() + m1).collect();
        let (_, rec) = scale_target_to_prior(&shifted, &cfg, PRIOR_DRAWS, 1).unwrap();
        assert!((rec.scale - 1.0).abs() < 1e-12 && rec.shift.abs() < 1e-12, "{rec:?}");
        assert!(scale_target_to_prior(&[1.0, 1.0], &cfg, PRIOR_DRAWS, 1).is_err());
    }

    #[test]
    fn pipeline_replay_is_bitwise() {
        let mut rng = seeded(5);
        let n = 300;
        let names: Vec<String> = ["a", "b", "flag", "c", "y"].iter().map(|s| s.to_string()).collect();
        let mut data = Vec::new();
        for _ in 0..n {
            let (a, b, c) = (std_normal(&mut rng), rng.random::<f64>() * 10.0, std_normal(&mut rng));
            let flag = (rng.random::<f64>() > 0.5) as u8 as f64;
            data.extend([a, b, flag, c, (a + 0.5 * c + 0.2 * std_normal(&mut rng)).exp()]);
        }
        let table = RawTable { names, data: Matrix::from_vec(n, 5, data), dropped_rows: 0 };
        let scenario = ScenarioConfig { p: 3, ..ScenarioConfig::by_id("glm-1").unwrap() };
        let cfg = PrepConfig { target: "y".into(), p: 3, n_rows: Some(50), transform_target: true, prior_draws: 20_000, seed: 9 };
        let (ds, rec) = preprocess(&table, &cfg, &scenario).unwrap();
        assert_eq!(rec.feature_names, vec!["a", "b", "c"]);
        assert_eq!(ds.rows.shape(), (50, 4));
        let json = serde_json::to_string(&rec).unwrap();
        let rec2: PreprocessRecord = serde_json::from_str(&json).unwrap();
        let again = apply_record(&table, &rec2).unwrap();
        assert!(ds.rows.data().iter().zip(again.rows.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        let (ds2, _) = preprocess(&table, &cfg, &scenario).unwrap();
        assert_eq!(ds.rows, ds2.rows);
    }
}
