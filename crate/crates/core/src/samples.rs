//! Posterior draws with provenance, stored as CSV plus a JSON sidecar.

use crate::ode::SolverStats;
use crate::{Error, Matrix, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrawFailure {
    pub index: usize,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub method: String,
    pub seed: Option<u64>,
    pub wall_ms: f64,
    /// Per-draw integrator statistics, aligned with the rows of `draws`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub solver: Vec<SolverStats>,
    /// Base draws whose trajectory failed; they have no row in `draws`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<DrawFailure>,
    /// Method-specific diagnostics (acceptance rates, R-hat, ...).
    #[serde(default)]
    pub diagnostics: serde_json::Value,
}

/// `n x d` posterior draws, one per row.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    pub draws: Matrix,
    pub names: Vec<String>,
    pub meta: SampleMeta,
}

pub fn default_names(d: usize) -> Vec<String> {
    (0..d).map(|i| format!("z{i}")).collect()
}

/// `samples.csv` -> `samples.json`.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

impl SampleSet {
    pub fn new(draws: Matrix, method: &str) -> Self {
        let names = default_names(draws.cols());
        Self { draws, names, meta: SampleMeta { method: method.to_string(), ..SampleMeta::default() } }
    }

    pub fn n(&self) -> usize {
        self.draws.rows()
    }

    pub fn dim(&self) -> usize {
        self.draws.cols()
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.dim() {
            return Err(Error::Dimension(format!("{} names for {} columns", names.len(), self.dim())));
        }
        self.names = names;
        Ok(self)
    }

    /// Keep only the listed columns.
    pub fn select(&self, cols: &[usize]) -> Self {
        Self {
            draws: self.draws.select_cols(cols),
            names: cols.iter().map(|&c| self.names[c].clone()).collect(),
            meta: self.meta.clone(),
        }
    }

    pub fn column_means(&self) -> Vec<f64> {
        let n = self.n().max(1) as f64;
        (0..self.dim()).map(|c| self.draws.column(c).iter().sum::<f64>() / n).collect()
    }

    /// Write the draws to `path` and the metadata next to it.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.names)?;
        for row in self.draws.iter_rows() {
            w.write_record(row.iter().map(|v| format!("{v:?}")))?;
        }
        w.flush()?;
        std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&self.meta)?)?;
        Ok(())
    }

    /// Read draws written by [`SampleSet::write`]. A missing sidecar gives
    /// default metadata.
    pub fn read(path: &Path) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
        let names: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let mut data = Vec::new();
        let mut rows = 0;
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            if rec.len() != names.len() {
                return Err(Error::Parse { line: i + 2, reason: format!("{} fields, header has {}", rec.len(), names.len()) });
            }
            for field in rec.iter() {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::Parse { line: i + 2, reason: format!("not a number: {field:?}") })?;
                data.push(v);
            }
            rows += 1;
        }
        let side = sidecar_path(path);
        let meta = if side.exists() {
            serde_json::from_str(&std::fs::read_to_string(side)?)?
        } else {
            SampleMeta::default()
        };
        Ok(Self { draws: Matrix::from_vec(rows, names.len(), data), names, meta })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let draws = Matrix::from_vec(3, 2, vec![0.1, -2.5e-300, 1.0 / 3.0, 7.0, f64::MIN_POSITIVE, -0.0]);
        let mut s = SampleSet::new(draws, "analytic").with_names(vec!["a".into(), "b".into()]).unwrap();
        s.meta.seed = Some(9);
        s.meta.solver = vec![SolverStats { steps: 3, rejects: 1, f_evals: 20 }; 3];
        s.meta.failures = vec![DrawFailure { index: 4, reason: "x".into() }];
        s.write(&path).unwrap();
        let back = SampleSet::read(&path).unwrap();
        assert_eq!(back, s);
        assert!(sidecar_path(&path).exists());
    }

    #[test]
    fn bad_rows_report_their_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        std::fs::write(&path, "a,b\n1,2\n3,x\n").unwrap();
        match SampleSet::read(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }
}
