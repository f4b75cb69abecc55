//! Dataset files: many (dataset, latent) pairs in one tensor container, or a
//! single dataset as CSV.

use std::path::Path;

use ctxflow::nn::{load_tensors, save_tensors};
use ctxflow::probmodels::sample_dataset;
use ctxflow::rng::stream;
use ctxflow::{ContextDataset, Matrix, ScenarioConfig};
use serde::{Deserialize, Serialize};

use crate::failure::{CliResult, Failure};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub scenario_id: String,
    pub scenario: ScenarioConfig,
    pub seed: u64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetFile {
    pub meta: DatasetMeta,
    pub datasets: Vec<ContextDataset>,
    /// Latent values used to generate each dataset.
    pub latents: Vec<Vec<f64>>,
}

/// A scenario by id, or from a JSON file when `spec` ends in `.json`.
pub fn resolve_scenario(spec: &str) -> CliResult<(String, ScenarioConfig)> {
    if spec.ends_with(".json") {
        let text = std::fs::read_to_string(spec).map_err(|e| Failure::config(format!("cannot read {spec}: {e}")))?;
        let cfg = ScenarioConfig::from_json(&text)?;
        cfg.validate()?;
        let id = Path::new(spec).file_stem().map_or("custom".into(), |s| s.to_string_lossy().into_owned());
        Ok((id, cfg))
    } else {
        Ok((spec.to_string(), ScenarioConfig::by_id(spec)?))
    }
}

/// Dataset `i` is drawn from stream `i` of `seed`.
pub fn generate(scenario_id: &str, cfg: &ScenarioConfig, n: usize, seed: u64) -> CliResult<DatasetFile> {
    let mut datasets = Vec::with_capacity(n);
    let mut latents = Vec::with_capacity(n);
    for i in 0..n {
        let (mut d, z) = sample_dataset(cfg, &mut stream(seed, i as u64))?;
        d.scenario = Some(scenario_id.to_string());
        d.seed = Some(seed);
        datasets.push(d);
        latents.push(z.values);
    }
    let meta = DatasetMeta { scenario_id: scenario_id.into(), scenario: cfg.clone(), seed, n };
    Ok(DatasetFile { meta, datasets, latents })
}

impl DatasetFile {
    pub fn write(&self, path: &Path) -> CliResult<()> {
        let zs: Vec<Matrix> = self.latents.iter().map(|z| Matrix::row_vector(z.clone())).collect();
        let mut named = Vec::with_capacity(2 * self.datasets.len());
        for (i, (d, z)) in self.datasets.iter().zip(&zs).enumerate() {
            named.push((format!("x.{i}"), &d.rows));
            named.push((format!("z.{i}"), z));
        }
        save_tensors(path, &named, serde_json::to_value(&self.meta)?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let (tensors, meta) = load_tensors::<f64>(path)?;
        let meta: DatasetMeta = serde_json::from_value(meta)
            .map_err(|e| Failure::config(format!("{} is not a dataset file: {e}", path.display())))?;
        let mut datasets = Vec::with_capacity(meta.n);
        let mut latents = Vec::with_capacity(meta.n);
        for i in 0..meta.n {
            let get = |key: String| {
                tensors
                    .iter()
                    .find(|(n, _)| *n == key)
                    .map(|(_, t)| t.clone())
                    .ok_or_else(|| Failure::config(format!("{} lacks tensor {key}", path.display())))
            };
            let mut d = ContextDataset::new(get(format!("x.{i}"))?, meta.scenario.family);
            d.scenario = Some(meta.scenario_id.clone());
            d.seed = Some(meta.seed);
            datasets.push(d);
            latents.push(get(format!("z.{i}"))?.into_vec());
        }
        Ok(Self { meta, datasets, latents })
    }
}

/// One dataset from a container (`index` selects it) or a headed CSV whose
/// columns are the dataset rows. The scenario comes from the container when
/// `scenario` is `None`.
pub fn load_dataset(path: &Path, index: usize, scenario: Option<&ScenarioConfig>) -> CliResult<(ContextDataset, Option<DatasetMeta>)> {
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        let cfg = scenario.ok_or_else(|| Failure::config("a CSV dataset needs --scenario"))?;
        let t = ctxflow::dataprep::load_csv(path)?;
        return Ok((ContextDataset::new(t.data, cfg.family), None));
    }
    let mut f = DatasetFile::read(path)?;
    if index >= f.datasets.len() {
        return Err(Failure::config(format!("dataset index {index} out of range ({} datasets)", f.datasets.len())));
    }
    let d = f.datasets.swap_remove(index);
    Ok((d, Some(f.meta)))
}
