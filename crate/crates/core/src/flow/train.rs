use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::objective::{loss_and_grad, make_training_example, mean_loss, Example};
use super::FlowConfig;
use crate::error::{Error, Result};
use crate::nn::{save_checkpoint, Checkpoint, Model};
use crate::probmodels::ScenarioConfig;
use crate::rng;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    /// Training examples consumed in total.
    pub total_samples: usize,
    pub batch_size: usize,
    pub max_lr: f64,
    pub final_div_factor: f64,
    pub warmup_fraction: f64,
    pub weight_decay: f64,
    pub grad_clip_norm: f64,
    /// Train / validation / test fractions of the example index space.
    pub split: [f64; 3],
    /// Steps between validation evaluations (0 disables them).
    pub val_every: usize,
    pub val_size: usize,
    /// Steps between checkpoints (0 writes only the final one).
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            total_samples: 100_000,
            batch_size: 64,
            max_lr: 5e-4,
            final_div_factor: 1e4,
            warmup_fraction: 0.1,
            weight_decay: 0.0,
            grad_clip_norm: 1.0,
            split: [0.5, 0.1, 0.4],
            val_every: 100,
            val_size: 256,
            checkpoint_every: 0,
            seed: 0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.total_samples == 0 {
            problems.push("total_samples must be positive".to_string());
        }
        if self.batch_size == 0 {
            problems.push("batch_size must be positive".to_string());
        }
        if !(self.max_lr > 0.0) {
            problems.push(format!("max_lr must be positive, got {}", self.max_lr));
        }
        if !(self.final_div_factor >= 1.0) {
            problems.push(format!("final_div_factor must be at least 1, got {}", self.final_div_factor));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            problems.push(format!("warmup_fraction must be in [0, 1), got {}", self.warmup_fraction));
        }
        if !(self.weight_decay >= 0.0) {
            problems.push(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if !(self.grad_clip_norm > 0.0) {
            problems.push(format!("grad_clip_norm must be positive, got {}", self.grad_clip_norm));
        }
        let sum: f64 = self.split.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || self.split.iter().any(|f| *f < 0.0) || self.split[0] <= 0.0 {
            problems.push(format!("split fractions must be non-negative and sum to 1, got {:?}", self.split));
        }
        if self.val_every > 0 && (self.split[1] <= 0.0 || self.val_size == 0) {
            problems.push("validation needs a positive validation fraction and val_size".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    pub fn steps(&self) -> usize {
        self.total_samples.div_ceil(self.batch_size)
    }

    /// Disjoint stream ranges: `[0, n_train)`, `[n_train, n_train + n_val)`,
    /// then test, where the index space is sized so the training range holds
    /// `total_samples` examples.
    pub fn stream_ranges(&self) -> [(u64, u64); 3] {
        let total = (self.total_samples as f64 / self.split[0]).ceil() as u64;
        let n_train = self.total_samples as u64;
        let n_val = (total as f64 * self.split[1]).floor() as u64;
        [(0, n_train), (n_train, n_train + n_val), (n_train + n_val, total.max(n_train + n_val))]
    }

    /// Example `i` of the held-out test range.
    pub fn test_stream(&self, i: u64) -> u64 {
        self.stream_ranges()[2].0 + i
    }
}

/// Learning rate at `step` (0-based) of `steps`: linear warmup from 0, then
/// cosine decay to `max_lr / final_div_factor` at the last step.
pub fn lr_at(cfg: &TrainerConfig, step: usize, steps: usize) -> f64 {
    let warm = (cfg.warmup_fraction * steps as f64).round() as usize;
    let min_lr = cfg.max_lr / cfg.final_div_factor;
    if step < warm {
        return cfg.max_lr * step as f64 / warm as f64;
    }
    let span = steps.saturating_sub(1).saturating_sub(warm);
    if span == 0 {
        return cfg.max_lr;
    }
    let p = ((step - warm) as f64 / span as f64).min(1.0);
    min_lr + (cfg.max_lr - min_lr) * 0.5 * (1.0 + (std::f64::consts::PI * p).cos())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub grad_norm: f64,
    pub wall_ms: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub fn val_losses(&self) -> Vec<(usize, f64)> {
        self.rows.iter().filter_map(|r| r.val_loss.map(|v| (r.step, v))).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        writeln!(f, "step,lr,train_loss,val_loss,grad_norm,wall_ms")?;
        for r in &self.rows {
            let val = r.val_loss.map(|v| format!("{v:e}")).unwrap_or_default();
            writeln!(f, "{},{:e},{:e},{},{:e},{}", r.step, r.lr, r.train_loss, val, r.grad_norm, r.wall_ms)?;
        }
        Ok(())
    }
}

pub struct TrainOptions<'a, T: Real> {
    /// Directory for `checkpoint.bin` and `train_log.csv`.
    pub out_dir: Option<PathBuf>,
    /// Continue from a checkpoint written by [`train`].
    pub resume: Option<Checkpoint<T>>,
    /// Stop after this many steps in this call (for resumption tests).
    pub max_steps: Option<usize>,
    pub on_step: Option<&'a mut dyn FnMut(&LogRow)>,
}

impl<T: Real> Default for TrainOptions<'_, T> {
    fn default() -> Self {
        Self { out_dir: None, resume: None, max_steps: None, on_step: None }
    }
}

const B1: f64 = 0.9;
const B2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const DROPOUT_SALT: u64 = 0xD509_0u64;

/// Validation examples, regenerated from their streams.
pub fn validation_set(cfg: &TrainerConfig, flow: &FlowConfig, scenario: &ScenarioConfig) -> Result<Vec<Example>> {
    let (lo, hi) = cfg.stream_ranges()[1];
    let n = (cfg.val_size as u64).min(hi - lo);
    (lo..lo + n)
        .map(|i| make_training_example(scenario, flow, &mut rng::stream(cfg.seed, i)))
        .collect()
}

/// Train `model` on freshly generated examples of `scenario`.
pub fn train<T: Real>(
    cfg: &TrainerConfig,
    flow: &FlowConfig,
    mut model: Model<T>,
    scenario: &ScenarioConfig,
    mut opts: TrainOptions<'_, T>,
) -> Result<(Model<T>, TrainLog)> {
    cfg.validate()?;
    flow.validate()?;
    scenario.validate()?;
    if model.cfg.latent_dim != scenario.latent_dim() || model.cfg.input_dim != scenario.row_width() {
        return Err(Error::Config(format!(
            "model dims (latent {}, input {}) do not fit scenario (latent {}, input {})",
            model.cfg.latent_dim,
            model.cfg.input_dim,
            scenario.latent_dim(),
            scenario.row_width()
        )));
    }
    let steps = cfg.steps();
    let n = model.params.len();
    let mut m: Vec<Tensor<T>> = model.params.zeros_like();
    let mut v: Vec<Tensor<T>> = model.params.zeros_like();
    let mut start = 0;
    let mut log = TrainLog::default();
    if let Some(ck) = opts.resume.take() {
        if ck.config != model.cfg {
            return Err(Error::Checkpoint("checkpoint model configuration differs".into()));
        }
        model.params = ck.params;
        for (name, t) in ck.extra {
            if let Some(rest) = name.strip_prefix("adam.m.") {
                m[model.params.id(rest)] = t;
            } else if let Some(rest) = name.strip_prefix("adam.v.") {
                v[model.params.id(rest)] = t;
            }
        }
        start = ck.meta.get("step").and_then(|s| s.as_u64()).unwrap_or(0) as usize;
        if let Some(rows) = ck.meta.get("log") {
            log.rows = serde_json::from_value(rows.clone())?;
        }
    }
    let val = if cfg.val_every > 0 { validation_set(cfg, flow, scenario)? } else { Vec::new() };
    let clock = Instant::now();
    let end = opts.max_steps.map_or(steps, |k| (start + k).min(steps));

    let save = |model: &Model<T>, m: &[Tensor<T>], v: &[Tensor<T>], step: usize, log: &TrainLog| -> Result<()> {
        let Some(dir) = &opts.out_dir else { return Ok(()) };
        std::fs::create_dir_all(dir)?;
        let names = model.params.names();
        let mut extra: Vec<(String, &Tensor<T>)> = Vec::with_capacity(2 * n);
        for i in 0..n {
            extra.push((format!("adam.m.{}", names[i]), &m[i]));
            extra.push((format!("adam.v.{}", names[i]), &v[i]));
        }
        let meta = serde_json::json!({
            "step": step,
            "trainer": cfg,
            "flow": flow,
            "scenario": scenario,
            "log": log.rows,
        });
        save_checkpoint(&dir.join("checkpoint.bin"), &model.cfg, &model.params, &extra, meta)?;
        log.write_csv(&dir.join("train_log.csv"))
    };

    for step in start..end {
        let lo = step * cfg.batch_size;
        let hi = (lo + cfg.batch_size).min(cfg.total_samples);
        let batch: Vec<Example> = (lo..hi)
            .map(|i| make_training_example(scenario, flow, &mut rng::stream(cfg.seed, i as u64)))
            .collect::<Result<_>>()?;
        let dropout = (model.cfg.dropout_rate > 0.0).then(|| cfg.seed ^ DROPOUT_SALT ^ ((step as u64) << 20));
        let (loss, mut grads) = loss_and_grad(&model, &batch, flow, dropout)
            .map_err(|e| Error::Training { batch: step, reason: e.to_string() })?;
        if !loss.is_finite() {
            return Err(Error::Training { batch: step, reason: format!("loss {loss}") });
        }
        let norm = grads.iter().map(|g| g.sum_sq().f64()).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(Error::Training { batch: step, reason: "non-finite gradient".into() });
        }
        if norm > cfg.grad_clip_norm {
            let s = T::c(cfg.grad_clip_norm / norm);
            for g in grads.iter_mut() {
                g.data_mut().iter_mut().for_each(|x| *x = *x * s);
            }
        }
        let lr = lr_at(cfg, step, steps);
        let t = (step + 1) as i32;
        let (c1, c2) = (1.0 - B1.powi(t), 1.0 - B2.powi(t));
        let (b1, b2, wd) = (T::c(B1), T::c(B2), T::c(cfg.weight_decay));
        let step_size = T::c(lr / c1);
        let (c2s, eps) = (T::c(c2), T::c(ADAM_EPS));
        for i in 0..n {
            let p = &mut model.params.tensors_mut()[i];
            let (mi, vi, gi) = (m[i].data_mut(), v[i].data_mut(), grads[i].data());
            for (k, w) in p.data_mut().iter_mut().enumerate() {
                let g = gi[k] + wd * *w;
                mi[k] = b1 * mi[k] + (T::one() - b1) * g;
                vi[k] = b2 * vi[k] + (T::one() - b2) * g * g;
                *w = *w - step_size * mi[k] / ((vi[k] / c2s).sqrt() + eps);
            }
        }
        let last = step + 1 == steps;
        let val_loss = if cfg.val_every > 0 && ((step + 1) % cfg.val_every == 0 || step == 0 || last) {
            Some(mean_loss(&model, &val, flow)?)
        } else {
            None
        };
        let row = LogRow {
            step,
            lr,
            train_loss: loss,
            val_loss,
            grad_norm: norm,
            wall_ms: clock.elapsed().as_millis() as u64,
        };
        if let Some(cb) = opts.on_step.as_mut() {
            cb(&row);
        }
        log.rows.push(row);
        if cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 {
            save(&model, &m, &v, step + 1, &log)?;
        }
    }
    save(&model, &m, &v, end, &log)?;
    Ok((model, log))
}
