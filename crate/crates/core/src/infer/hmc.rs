use super::{split_rhat, LogDensity};
use crate::probmodels::distributions::std_normal;
use crate::rng::{stream, StreamRng};
use crate::samples::SampleSet;
use crate::{Error, Matrix, Result};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;

/// Energy error above which a trajectory counts as divergent.
const DIVERGENCE: f64 = 1e3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HmcConfig {
    pub n_chains: usize,
    pub burn_in: usize,
    /// Draws kept per chain after burn-in.
    pub n_samples: usize,
    /// Integration time per transition; the step count is `path_length / step_size`.
    pub path_length: f64,
    /// Fixed number of leapfrog steps, overriding `path_length`.
    #[serde(default)]
    pub leapfrog_steps: Option<usize>,
    pub max_leapfrog: usize,
    pub target_accept: f64,
    /// Estimate a diagonal mass matrix during burn-in.
    pub adapt_mass: bool,
    /// Half-width of the uniform jitter added to a shared initial point.
    pub init_jitter: f64,
    pub seed: u64,
}

impl Default for HmcConfig {
    fn default() -> Self {
        Self {
            n_chains: 4,
            burn_in: 500,
            n_samples: 1000,
            path_length: 1.0,
            leapfrog_steps: None,
            max_leapfrog: 1024,
            target_accept: 0.8,
            adapt_mass: true,
            init_jitter: 0.0,
            seed: 0,
        }
    }
}

impl HmcConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.n_chains == 0 {
            problems.push("n_chains must be at least 1".to_string());
        }
        if self.n_samples == 0 {
            problems.push("n_samples must be at least 1".to_string());
        }
        if !(self.path_length > 0.0) {
            problems.push(format!("path_length must be positive, got {}", self.path_length));
        }
        if self.leapfrog_steps == Some(0) || self.max_leapfrog == 0 {
            problems.push("leapfrog step counts must be at least 1".to_string());
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            problems.push(format!("target_accept must be in (0, 1), got {}", self.target_accept));
        }
        if !(self.init_jitter >= 0.0) {
            problems.push(format!("init_jitter must be non-negative, got {}", self.init_jitter));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HmcDiagnostics {
    /// Mean Metropolis acceptance probability after burn-in, per chain.
    pub acceptance: Vec<f64>,
    pub divergences: Vec<usize>,
    pub step_size: Vec<f64>,
    pub leapfrog_steps: Vec<usize>,
    pub rhat: Vec<f64>,
}

pub struct HmcOutput {
    /// All chains stacked in chain order.
    pub samples: SampleSet,
    pub chains: Vec<Matrix>,
    pub diagnostics: HmcDiagnostics,
}

struct State {
    q: Vec<f64>,
    grad: Vec<f64>,
    logp: f64,
}

/// `steps` leapfrog steps of size `eps` under the diagonal inverse mass.
/// Returns the end state and momentum.
pub fn leapfrog<L: LogDensity + ?Sized>(
    target: &L,
    q: &[f64],
    p: &[f64],
    eps: f64,
    inv_mass: &[f64],
    steps: usize,
) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let mut grad = vec![0.0; q.len()];
    target.log_density_grad(q, &mut grad)?;
    let start = State { q: q.to_vec(), grad, logp: 0.0 };
    let (end, p) = trajectory(target, &start, p.to_vec(), eps, inv_mass, steps)?;
    Ok((end.q, p, end.logp))
}

fn trajectory<L: LogDensity + ?Sized>(
    target: &L,
    start: &State,
    mut p: Vec<f64>,
    eps: f64,
    inv_mass: &[f64],
    steps: usize,
) -> Result<(State, Vec<f64>)> {
    let mut q = start.q.clone();
    let mut grad = start.grad.clone();
    let mut logp = start.logp;
    for (p, g) in p.iter_mut().zip(&grad) {
        *p += 0.5 * eps * g;
    }
    for i in 0..steps {
        for j in 0..q.len() {
            q[j] += eps * inv_mass[j] * p[j];
        }
        logp = target.log_density_grad(&q, &mut grad)?;
        let w = if i + 1 == steps { 0.5 } else { 1.0 };
        for (p, g) in p.iter_mut().zip(&grad) {
            *p += w * eps * g;
        }
    }
    Ok((State { q, grad, logp }, p))
}

fn kinetic(p: &[f64], inv_mass: &[f64]) -> f64 {
    0.5 * p.iter().zip(inv_mass).map(|(p, m)| m * p * p).sum::<f64>()
}

struct Transition {
    accept_prob: f64,
    divergent: bool,
}

fn transition<L: LogDensity + ?Sized>(
    target: &L,
    state: &mut State,
    eps: f64,
    inv_mass: &[f64],
    steps: usize,
    rng: &mut StreamRng,
) -> Transition {
    let p: Vec<f64> = inv_mass.iter().map(|m| std_normal(rng) / m.sqrt()).collect();
    let h0 = -state.logp + kinetic(&p, inv_mass);
    let proposal = trajectory(target, state, p, eps, inv_mass, steps);
    let u: f64 = rng.random();
    let (end, p) = match proposal {
        Ok(r) => r,
        Err(_) => return Transition { accept_prob: 0.0, divergent: true },
    };
    let dh = -end.logp + kinetic(&p, inv_mass) - h0;
    if !dh.is_finite() || dh > DIVERGENCE {
        return Transition { accept_prob: 0.0, divergent: true };
    }
    let a = (-dh).exp().min(1.0);
    if u < a {
        *state = end;
    }
    Transition { accept_prob: a, divergent: false }
}

/// Step size where a single leapfrog step has acceptance near one half.
fn initial_step_size<L: LogDensity + ?Sized>(target: &L, state: &State, inv_mass: &[f64], rng: &mut StreamRng) -> f64 {
    let mut eps = 1.0;
    let accept = |eps: f64, rng: &mut StreamRng| {
        let p: Vec<f64> = inv_mass.iter().map(|m| std_normal(rng) / m.sqrt()).collect();
        let h0 = -state.logp + kinetic(&p, inv_mass);
        match trajectory(target, state, p, eps, inv_mass, 1) {
            Ok((end, p)) => {
                let dh = -end.logp + kinetic(&p, inv_mass) - h0;
                if dh.is_finite() { (-dh).exp().min(1.0) } else { 0.0 }
            }
            Err(_) => 0.0,
        }
    };
    let a = accept(eps, rng);
    let dir = if a > 0.5 { 1.0 } else { -1.0 };
    for _ in 0..100 {
        let a = accept(eps, rng);
        if a.powf(dir) <= 2f64.powf(-dir) {
            break;
        }
        eps *= 2f64.powf(dir);
    }
    eps
}

/// Nesterov dual averaging of `log eps` towards a target acceptance rate.
struct DualAveraging {
    mu: f64,
    target: f64,
    h_bar: f64,
    log_eps_bar: f64,
    t: f64,
}

impl DualAveraging {
    fn new(eps: f64, target: f64) -> Self {
        Self { mu: (10.0 * eps).ln(), target, h_bar: 0.0, log_eps_bar: 0.0, t: 0.0 }
    }

    fn update(&mut self, accept_prob: f64) -> f64 {
        const GAMMA: f64 = 0.05;
        const T0: f64 = 10.0;
        const KAPPA: f64 = 0.75;
        self.t += 1.0;
        let eta = 1.0 / (self.t + T0);
        self.h_bar = (1.0 - eta) * self.h_bar + eta * (self.target - accept_prob);
        let log_eps = self.mu - self.t.sqrt() / GAMMA * self.h_bar;
        let w = self.t.powf(-KAPPA);
        self.log_eps_bar = w * log_eps + (1.0 - w) * self.log_eps_bar;
        log_eps.exp()
    }

    fn final_step(&self) -> f64 {
        self.log_eps_bar.exp()
    }
}

struct ChainRun {
    draws: Matrix,
    acceptance: f64,
    divergences: usize,
    step_size: f64,
    steps: usize,
}

fn n_steps(cfg: &HmcConfig, eps: f64) -> usize {
    cfg.leapfrog_steps.unwrap_or_else(|| (cfg.path_length / eps).ceil() as usize).clamp(1, cfg.max_leapfrog)
}

fn run_chain<L: LogDensity + ?Sized>(target: &L, init: &[f64], cfg: &HmcConfig, chain: usize) -> Result<ChainRun> {
    let mut rng = stream(cfg.seed, chain as u64);
    let d = target.dim();
    let q: Vec<f64> = init.iter().map(|v| v + cfg.init_jitter * (2.0 * rng.random::<f64>() - 1.0)).collect();
    let mut grad = vec![0.0; d];
    let logp = target
        .log_density_grad(&q, &mut grad)
        .map_err(|e| Error::Inference { step: 0, reason: format!("chain {chain}: initial point: {e}") })?;
    let mut state = State { q, grad, logp };
    let mut inv_mass = vec![1.0; d];
    let mut eps = initial_step_size(target, &state, &inv_mass, &mut rng);
    let mut da = DualAveraging::new(eps, cfg.target_accept);

    // Windows: fast step-size adaptation, slow window collecting draws for
    // the mass matrix, then a final fast window under the new metric.
    let b = cfg.burn_in;
    let (slow_start, slow_end) = if cfg.adapt_mass && b >= 100 { (b * 15 / 100, b / 2) } else { (b, b) };
    let mut window: Vec<Vec<f64>> = Vec::new();
    for it in 0..b {
        let tr = transition(target, &mut state, eps, &inv_mass, n_steps(cfg, eps), &mut rng);
        eps = da.update(tr.accept_prob);
        if it >= slow_start && it < slow_end {
            window.push(state.q.clone());
        }
        if it + 1 == slow_end && slow_end > slow_start {
            let n = window.len() as f64;
            for (j, m) in inv_mass.iter_mut().enumerate() {
                let mean = window.iter().map(|q| q[j]).sum::<f64>() / n;
                let var = window.iter().map(|q| (q[j] - mean).powi(2)).sum::<f64>() / (n - 1.0);
                *m = n / (n + 5.0) * var + 1e-3 * 5.0 / (n + 5.0);
            }
            eps = initial_step_size(target, &state, &inv_mass, &mut rng);
            da = DualAveraging::new(eps, cfg.target_accept);
        }
    }
    if b > 0 {
        eps = da.final_step();
    }
    let steps = n_steps(cfg, eps);
    let mut draws = Matrix::zeros(cfg.n_samples, d);
    let (mut acc, mut div) = (0.0, 0);
    for i in 0..cfg.n_samples {
        let tr = transition(target, &mut state, eps, &inv_mass, steps, &mut rng);
        acc += tr.accept_prob;
        div += tr.divergent as usize;
        draws.row_mut(i).copy_from_slice(&state.q);
    }
    if div == cfg.n_samples {
        return Err(Error::Inference {
            step: cfg.burn_in + cfg.n_samples,
            reason: format!("every transition of chain {chain} diverged (step size {eps:.3e})"),
        });
    }
    Ok(ChainRun { draws, acceptance: acc / cfg.n_samples as f64, divergences: div, step_size: eps, steps })
}

/// Run `cfg.n_chains` independent HMC chains. `inits` holds one starting
/// point per chain, or a single point shared by all of them.
pub fn hmc_sample<L: LogDensity + ?Sized>(target: &L, inits: &[Vec<f64>], cfg: &HmcConfig) -> Result<HmcOutput> {
    cfg.validate()?;
    let start = Instant::now();
    if inits.len() != 1 && inits.len() != cfg.n_chains {
        return Err(Error::Config(format!("{} initial points for {} chains", inits.len(), cfg.n_chains)));
    }
    if let Some(bad) = inits.iter().find(|q| q.len() != target.dim()) {
        return Err(Error::Dimension(format!("initial point of length {}, target has {}", bad.len(), target.dim())));
    }
    let runs = (0..cfg.n_chains)
        .into_par_iter()
        .map(|c| run_chain(target, &inits[c % inits.len()], cfg, c))
        .collect::<Result<Vec<_>>>()?;
    let chains: Vec<Matrix> = runs.iter().map(|r| r.draws.clone()).collect();
    let diagnostics = HmcDiagnostics {
        acceptance: runs.iter().map(|r| r.acceptance).collect(),
        divergences: runs.iter().map(|r| r.divergences).collect(),
        step_size: runs.iter().map(|r| r.step_size).collect(),
        leapfrog_steps: runs.iter().map(|r| r.steps).collect(),
        rhat: split_rhat(&chains),
    };
    let mut samples = SampleSet::new(Matrix::vstack(&chains.iter().collect::<Vec<_>>()), "hmc");
    samples.meta.seed = Some(cfg.seed);
    samples.meta.diagnostics = serde_json::to_value(&diagnostics)?;
    samples.meta.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(HmcOutput { samples, chains, diagnostics })
}
