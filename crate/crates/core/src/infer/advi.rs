use super::LogDensity;
use crate::probmodels::distributions::std_normal;
use crate::samples::SampleSet;
use crate::{Error, Matrix, Result};
use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::time::Instant;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdviFamily {
    Diagonal,
    FullRank,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdviConfig {
    pub family: AdviFamily,
    pub steps: usize,
    pub lr: f64,
    /// Reparameterized draws per gradient estimate.
    pub mc_samples: usize,
    /// Initial standard deviation of every coordinate.
    pub init_scale: f64,
    /// Draws returned from the fitted approximation.
    pub n_draws: usize,
    /// Fraction of final steps whose iterates are averaged into the reported
    /// fit. Zero reports the last iterate.
    pub average_tail: f64,
}

impl Default for AdviConfig {
    fn default() -> Self {
        Self { family: AdviFamily::FullRank, steps: 2000, lr: 1e-2, mc_samples: 8, init_scale: 0.1, n_draws: 1000, average_tail: 0.5 }
    }
}

impl AdviConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.steps == 0 || self.mc_samples == 0 {
            problems.push("steps and mc_samples must be at least 1".to_string());
        }
        if !(self.lr > 0.0) {
            problems.push(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.init_scale > 0.0) {
            problems.push(format!("init_scale must be positive, got {}", self.init_scale));
        }
        if !(0.0..1.0).contains(&self.average_tail) {
            problems.push(format!("average_tail must be in [0, 1), got {}", self.average_tail));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdviResult {
    pub family: AdviFamily,
    pub mean: Vec<f64>,
    /// Lower-triangular factor of the covariance (diagonal for mean-field).
    pub chol: DMatrix<f64>,
    /// ELBO estimate at every step.
    pub elbo: Vec<f64>,
    pub samples: SampleSet,
}

impl AdviResult {
    pub fn cov(&self) -> DMatrix<f64> {
        &self.chol * self.chol.transpose()
    }
}

/// Variational parameters: mean, log of the factor diagonal, then the
/// strictly lower entries row by row (full rank only).
struct Params {
    d: usize,
    v: Vec<f64>,
}

impl Params {
    fn factor(&self) -> DMatrix<f64> {
        let d = self.d;
        let mut l = DMatrix::zeros(d, d);
        for i in 0..d {
            l[(i, i)] = self.v[d + i].exp();
        }
        let mut n = 2 * d;
        for i in 0..d {
            for j in 0..i {
                if n < self.v.len() {
                    l[(i, j)] = self.v[n];
                }
                n += 1;
            }
        }
        l
    }
}

/// Fit a Gaussian to `target` by maximizing the ELBO with reparameterized
/// gradients and Adam. Starts at `init` (zeros when `None`).
pub fn advi<L: LogDensity + ?Sized, R: Rng + ?Sized>(
    target: &L,
    init: Option<&[f64]>,
    cfg: &AdviConfig,
    rng: &mut R,
) -> Result<AdviResult> {
    cfg.validate()?;
    let start = Instant::now();
    let d = target.dim();
    let n_off = if cfg.family == AdviFamily::FullRank { d * (d - 1) / 2 } else { 0 };
    let mut p = Params { d, v: vec![0.0; 2 * d + n_off] };
    if let Some(x) = init {
        if x.len() != d {
            return Err(Error::Dimension(format!("initial mean of length {}, target has {d}", x.len())));
        }
        p.v[..d].copy_from_slice(x);
    }
    p.v[d..2 * d].fill(cfg.init_scale.ln());
    let (mut m, mut s) = (vec![0.0; p.v.len()], vec![0.0; p.v.len()]);
    let (b1, b2) = (0.9f64, 0.999f64);
    let mut elbo = Vec::with_capacity(cfg.steps);
    let mut g = vec![0.0; d];
    let entropy_const = 0.5 * d as f64 * (1.0 + LN_2PI);
    let tail_start = cfg.steps - (cfg.average_tail * cfg.steps as f64).floor() as usize;
    let mut avg = vec![0.0; p.v.len()];
    for step in 1..=cfg.steps {
        let l = p.factor();
        let mut grad = vec![0.0; p.v.len()];
        let mut lp_sum = 0.0;
        for _ in 0..cfg.mc_samples {
            let eps: Vec<f64> = (0..d).map(|_| std_normal(rng)).collect();
            let z: Vec<f64> = (0..d).map(|i| p.v[i] + (0..=i).map(|j| l[(i, j)] * eps[j]).sum::<f64>()).collect();
            let lp = target
                .log_density_grad(&z, &mut g)
                .map_err(|e| Error::Inference { step, reason: format!("log-density: {e}") })?;
            lp_sum += lp;
            for i in 0..d {
                grad[i] += g[i];
                grad[d + i] += g[i] * eps[i] * l[(i, i)];
            }
            let mut n = 2 * d;
            for i in 0..d {
                for j in 0..i {
                    if n_off > 0 {
                        grad[n] += g[i] * eps[j];
                    }
                    n += 1;
                }
            }
        }
        let k = cfg.mc_samples as f64;
        grad.iter_mut().for_each(|v| *v /= k);
        for i in 0..d {
            grad[d + i] += 1.0;
        }
        let value = lp_sum / k + p.v[d..2 * d].iter().sum::<f64>() + entropy_const;
        if !value.is_finite() || grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::Inference { step, reason: format!("non-finite ELBO {value}") });
        }
        elbo.push(value);
        let (c1, c2) = (1.0 - b1.powi(step as i32), 1.0 - b2.powi(step as i32));
        for i in 0..p.v.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
            s[i] = b2 * s[i] + (1.0 - b2) * grad[i] * grad[i];
            p.v[i] += cfg.lr * (m[i] / c1) / ((s[i] / c2).sqrt() + 1e-8);
        }
        if step > tail_start {
            avg.iter_mut().zip(&p.v).for_each(|(a, v)| *a += v);
        }
    }
    if tail_start < cfg.steps {
        let n = (cfg.steps - tail_start) as f64;
        p.v = avg.into_iter().map(|a| a / n).collect();
    }
    let chol = p.factor();
    let mean = p.v[..d].to_vec();
    let mut draws = Matrix::zeros(cfg.n_draws, d);
    for r in 0..cfg.n_draws {
        let eps: Vec<f64> = (0..d).map(|_| std_normal(rng)).collect();
        for i in 0..d {
            draws.set(r, i, mean[i] + (0..=i).map(|j| chol[(i, j)] * eps[j]).sum::<f64>());
        }
    }
    let mut samples = SampleSet::new(draws, "advi");
    samples.meta.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    samples.meta.diagnostics = serde_json::json!({
        "family": cfg.family,
        "final_elbo": elbo.last(),
    });
    Ok(AdviResult { family: cfg.family, mean, chol, elbo, samples })
}
