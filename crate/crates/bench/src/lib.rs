//! Deterministic fixtures shared by the benchmarks.

use ctxflow::flow::{make_training_example, Example, FlowConfig};
use ctxflow::nn::{Model, ModelConfig};
use ctxflow::probmodels::distributions::std_normal;
use ctxflow::probmodels::sample_dataset;
use ctxflow::rng::stream;
use ctxflow::{ContextDataset, Matrix, Real, Result, ScenarioConfig};

/// One dataset of the named scenario.
pub fn dataset(id: &str, seed: u64) -> Result<(ScenarioConfig, ContextDataset)> {
    let cfg = ScenarioConfig::by_id(id)?;
    let (data, _) = sample_dataset(&cfg, &mut stream(seed, 0))?;
    Ok((cfg, data))
}

/// `n x d` standard normal draws shifted by `shift` in every coordinate.
pub fn gaussian_cloud(n: usize, d: usize, shift: f64, seed: u64) -> Matrix {
    let mut rng = stream(seed, 1);
    Matrix::from_vec(n, d, (0..n * d).map(|_| std_normal(&mut rng) + shift).collect())
}

/// A desk-size model for `cfg` with perturbed output layers, so the vector
/// field is not identically zero.
pub fn desk_model<T: Real>(cfg: &ScenarioConfig, seed: u64) -> Result<Model<T>> {
    let mut m = Model::<T>::new(ModelConfig::desk(cfg.latent_dim(), cfg.row_width()), seed)?;
    m.params.perturb(seed ^ 0xBE, 0.05);
    Ok(m)
}

pub fn training_batch(cfg: &ScenarioConfig, flow: &FlowConfig, n: usize, seed: u64) -> Result<Vec<Example>> {
    (0..n as u64).map(|i| make_training_example(cfg, flow, &mut stream(seed, i))).collect()
}
