//! Scenario-level dispatch of the reference methods, with default starting
//! points and the multi-chain rule for mixture posteriors.

use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{advi, hmc_sample, laplace_approximation, map_estimate, AdviConfig, AdviFamily, HmcConfig, MapConfig};
use crate::probmodels::{analytic_posterior, ContextDataset, Family, ScenarioConfig, ScenarioTarget};
use crate::rng::stream;
use crate::samples::SampleSet;
use crate::{Error, Matrix, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Analytic,
    Hmc,
    Laplace,
    AdviDiag,
    AdviFull,
    Map,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Analytic => "analytic",
            Method::Hmc => "hmc",
            Method::Laplace => "laplace",
            Method::AdviDiag => "advi-diag",
            Method::AdviFull => "advi-full",
            Method::Map => "map",
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "analytic" => Method::Analytic,
            "hmc" => Method::Hmc,
            "laplace" => Method::Laplace,
            "advi-diag" => Method::AdviDiag,
            "advi-full" => Method::AdviFull,
            "map" => Method::Map,
            _ => {
                return Err(Error::Config(format!(
                    "unknown method `{s}` (expected hmc, laplace, advi-diag, advi-full, map or analytic)"
                )))
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReferenceConfig {
    /// Draws returned (HMC draws are thinned evenly to this count).
    pub n_draws: usize,
    pub hmc: HmcConfig,
    /// Chains for GMM scenarios when `hmc.n_chains` is left at its default;
    /// `None` means three per component.
    pub gmm_chains: Option<usize>,
    pub advi: AdviConfig,
    pub map: MapConfig,
    pub seed: u64,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self {
            n_draws: 1000,
            hmc: HmcConfig::default(),
            gmm_chains: None,
            advi: AdviConfig::default(),
            map: MapConfig::default(),
            seed: 0,
        }
    }
}

/// Deterministic starting point in the full target space: zeros, except for
/// GMM scenarios where component means start at evenly spaced data
/// quantiles and variances at the per-dimension data variance.
pub fn default_init(cfg: &ScenarioConfig, data: &ContextDataset) -> Vec<f64> {
    let layout = cfg.target_layout();
    let mut z = vec![0.0; layout.dim()];
    if cfg.family == Family::GMM && data.k() > 0 {
        let (m, l) = (cfg.m, cfg.l);
        for d in 0..l {
            let mut col = data.rows.column(d);
            col.sort_by(f64::total_cmp);
            let n = col.len() as f64;
            let mean = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            for c in 0..m {
                let q = (c as f64 + 0.5) / m as f64;
                z[c * l + d] = col[((q * n) as usize).min(col.len() - 1)];
                z[m * l + c * l + d] = var.max(1e-6).ln();
            }
        }
    }
    z
}

/// Relabel the mixture components of a GMM target point: component `c`
/// takes the parameters of component `(c + shift) % M`.
pub fn rotate_components(cfg: &ScenarioConfig, z: &[f64], shift: usize) -> Vec<f64> {
    let (m, l) = (cfg.m, cfg.l);
    let mut out = z.to_vec();
    for c in 0..m {
        let src = (c + shift) % m;
        for d in 0..l {
            out[c * l + d] = z[src * l + d];
            out[m * l + c * l + d] = z[m * l + src * l + d];
        }
    }
    // phi logits with the last component anchored at 0
    let full: Vec<f64> = z[2 * m * l..].iter().copied().chain(std::iter::once(0.0)).collect();
    let rotated: Vec<f64> = (0..m).map(|c| full[(c + shift) % m]).collect();
    for c in 0..m - 1 {
        out[2 * m * l + c] = rotated[c] - rotated[m - 1];
    }
    out
}

/// One starting point per chain. GMM chains cycle through label rotations
/// of the default point so every relabelled mode is visited.
pub fn chain_inits(cfg: &ScenarioConfig, data: &ContextDataset, n_chains: usize, jitter: f64, seed: u64) -> Vec<Vec<f64>> {
    let base = default_init(cfg, data);
    (0..n_chains)
        .map(|c| {
            let mut z = if cfg.family == Family::GMM { rotate_components(cfg, &base, c % cfg.m) } else { base.clone() };
            if jitter > 0.0 {
                let mut rng = stream(seed, 0x1417 + c as u64);
                z.iter_mut().for_each(|v| *v += rng.random_range(-jitter..jitter));
            }
            z
        })
        .collect()
}

/// Evenly spaced rows, `n` of them.
fn thin(m: &Matrix, n: usize) -> Matrix {
    if m.rows() <= n {
        return m.clone();
    }
    let idx: Vec<usize> = (0..n).map(|i| i * m.rows() / n).collect();
    m.select_rows(&idx)
}

/// Run `method` on one dataset. Draws are reported in the coordinates of the
/// scenario's latent layout (the prefix of the full target).
pub fn reference_samples(method: Method, scenario: &ScenarioConfig, data: &ContextDataset, rc: &ReferenceConfig) -> Result<SampleSet> {
    let latent = scenario.latent_layout();
    let d = latent.dim();
    let names = latent.coordinate_names();
    let target = ScenarioTarget::new(scenario, data)?;
    let start = std::time::Instant::now();
    let mut rng = stream(rc.seed, 0xAEF);
    let mut set = match method {
        Method::Analytic => {
            let post = analytic_posterior(scenario, data)?;
            SampleSet::new(post.sample(rc.n_draws, &mut rng), "analytic")
        }
        Method::Hmc => {
            let mut cfg = rc.hmc.clone();
            cfg.seed = rc.seed;
            if scenario.family == Family::GMM && cfg.n_chains == HmcConfig::default().n_chains {
                cfg.n_chains = rc.gmm_chains.unwrap_or(3 * scenario.m);
            }
            cfg.n_samples = cfg.n_samples.max(rc.n_draws.div_ceil(cfg.n_chains));
            let inits = chain_inits(scenario, data, cfg.n_chains, cfg.init_jitter, rc.seed);
            let jitter = cfg.init_jitter;
            cfg.init_jitter = 0.0;
            let out = hmc_sample(&target, &inits, &cfg)?;
            let mut s = SampleSet::new(thin(&out.samples.draws, rc.n_draws), "hmc");
            s.meta.diagnostics = out.samples.meta.diagnostics;
            s.meta.diagnostics["init_jitter"] = jitter.into();
            s
        }
        Method::Laplace => {
            let r = laplace_approximation(&target, &default_init(scenario, data), &rc.map)?;
            let mut s = SampleSet::new(r.posterior.sample(rc.n_draws, &mut rng), "laplace");
            s.meta.diagnostics = serde_json::json!({ "map": r.map.point, "floored": r.floored });
            s
        }
        Method::AdviDiag | Method::AdviFull => {
            let mut cfg = rc.advi.clone();
            cfg.family = if method == Method::AdviDiag { AdviFamily::Diagonal } else { AdviFamily::FullRank };
            cfg.n_draws = rc.n_draws;
            let r = advi(&target, Some(&default_init(scenario, data)), &cfg, &mut rng)?;
            let mut s = r.samples;
            s.meta.method = method.name().into();
            s.meta.diagnostics = serde_json::json!({ "final_elbo": r.elbo.last() });
            s
        }
        Method::Map => {
            let r = map_estimate(&target, &default_init(scenario, data), &rc.map)?;
            let mut s = SampleSet::new(Matrix::row_vector(r.point.clone()), "map");
            s.meta.diagnostics = serde_json::json!({
                "log_density": r.log_density, "grad_norm": r.grad_norm, "converged": r.converged
            });
            s
        }
    };
    if set.dim() > d {
        set.draws = set.draws.select_cols(&(0..d).collect::<Vec<_>>());
    }
    set.names = names;
    set.meta.seed = Some(rc.seed);
    set.meta.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(set)
}
