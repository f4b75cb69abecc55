use crate::autodiff::Tape;
use crate::{Error, Matrix, Result, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpConfig {
    /// Width of both hidden layers; `None` is `max(10 D, 16)`.
    #[serde(default)]
    pub hidden: Option<usize>,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a new best validation loss before stopping.
    pub patience: usize,
    pub val_fraction: f64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self { hidden: None, lr: 1e-3, batch_size: 64, max_epochs: 200, patience: 10, val_fraction: 0.2 }
    }
}

/// Mean binary cross-entropy of the network on `(x, y)` and its gradient.
/// Parameters are `[w1, b1, w2, b2, w3, b3]` with weights stored `in x out`.
pub fn mlp_loss_and_grad(params: &[Tensor<f64>], x: &Matrix, y: &[f64]) -> (f64, Vec<Tensor<f64>>) {
    let mut tape = Tape::new();
    let v: Vec<_> = params.iter().enumerate().map(|(i, p)| tape.param(i, p)).collect();
    let logits = forward(&mut tape, &v, x);
    let loss = tape.bce_logits(logits, y);
    let mut grads: Vec<Tensor<f64>> = params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect();
    tape.backward(loss, 1.0, &mut grads);
    (tape.value(loss).data()[0], grads)
}

fn forward<'a>(tape: &mut Tape<'a, f64>, v: &[crate::autodiff::Var], x: &Matrix) -> crate::autodiff::Var {
    let mut h = tape.constant(x.clone());
    for l in 0..3 {
        let z = tape.matmul(h, v[2 * l]);
        h = tape.add_row(z, v[2 * l + 1]);
        if l < 2 {
            h = tape.relu(h);
        }
    }
    h
}

fn logits(params: &[Tensor<f64>], x: &Matrix) -> Vec<f64> {
    let mut tape = Tape::new();
    let v: Vec<_> = params.iter().enumerate().map(|(i, p)| tape.param(i, p)).collect();
    let out = forward(&mut tape, &v, x);
    tape.value(out).data().to_vec()
}

fn init<R: Rng + ?Sized>(d: usize, h: usize, rng: &mut R) -> Vec<Tensor<f64>> {
    let glorot = |i: usize, o: usize, rng: &mut R| {
        let a = (6.0 / (i + o) as f64).sqrt();
        Tensor::from_vec(i, o, (0..i * o).map(|_| rng.random_range(-a..a)).collect())
    };
    vec![
        glorot(d, h, rng),
        Tensor::zeros(1, h),
        glorot(h, h, rng),
        Tensor::zeros(1, h),
        glorot(h, 1, rng),
        Tensor::zeros(1, 1),
    ]
}

/// Train a two-hidden-layer ReLU classifier on standardized features with
/// early stopping, then return class-1 probabilities for `test`.
pub fn mlp_fit_predict<R: Rng + ?Sized>(
    train: &Matrix,
    labels: &[bool],
    test: &Matrix,
    cfg: &MlpConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let (n, d) = train.shape();
    if n != labels.len() || test.cols() != d {
        return Err(Error::Dimension(format!("{n}x{d} training rows, {} labels, {} test columns", labels.len(), test.cols())));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 || pos == n {
        return Err(Error::Metric("MLP classifier needs both classes in the training set".into()));
    }
    if !(cfg.lr > 0.0 && cfg.batch_size > 0 && cfg.val_fraction > 0.0 && cfg.val_fraction < 1.0) {
        return Err(Error::Config(format!("invalid MLP configuration {cfg:?}")));
    }
    let mean: Vec<f64> = (0..d).map(|c| train.column(c).iter().sum::<f64>() / n as f64).collect();
    let sd: Vec<f64> = (0..d)
        .map(|c| {
            let v = train.column(c).iter().map(|x| (x - mean[c]).powi(2)).sum::<f64>() / n as f64;
            if v > 0.0 { v.sqrt() } else { 1.0 }
        })
        .collect();
    let scale = |m: &Matrix| {
        let mut out = m.clone();
        for r in 0..out.rows() {
            for (c, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = (*v - mean[c]) / sd[c];
            }
        }
        out
    };
    let (xs, xt) = (scale(train), scale(test));
    let y: Vec<f64> = labels.iter().map(|&l| l as u8 as f64).collect();

    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let n_val = ((n as f64 * cfg.val_fraction).round() as usize).clamp(1, n - 1);
    let (val, fit) = idx.split_at(n_val);
    let (xv, yv) = (xs.select_rows(val), val.iter().map(|&i| y[i]).collect::<Vec<_>>());
    let mut fit = fit.to_vec();

    let h = cfg.hidden.unwrap_or((10 * d).max(16));
    let mut params = init(d, h, rng);
    let mut m: Vec<Tensor<f64>> = params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect();
    let mut v = m.clone();
    let (b1, b2) = (0.9f64, 0.999f64);
    let mut t = 0;
    let mut best = (f64::INFINITY, params.clone());
    let mut stale = 0;
    for _ in 0..cfg.max_epochs {
        fit.shuffle(rng);
        for batch in fit.chunks(cfg.batch_size) {
            let xb = xs.select_rows(batch);
            let yb: Vec<f64> = batch.iter().map(|&i| y[i]).collect();
            let (_, grads) = mlp_loss_and_grad(&params, &xb, &yb);
            t += 1;
            let (c1, c2) = (1.0 - b1.powi(t), 1.0 - b2.powi(t));
            for k in 0..params.len() {
                let (p, g) = (params[k].data_mut(), grads[k].data());
                let (mk, vk) = (m[k].data_mut(), v[k].data_mut());
                for j in 0..p.len() {
                    mk[j] = b1 * mk[j] + (1.0 - b1) * g[j];
                    vk[j] = b2 * vk[j] + (1.0 - b2) * g[j] * g[j];
                    p[j] -= cfg.lr * (mk[j] / c1) / ((vk[j] / c2).sqrt() + 1e-8);
                }
            }
        }
        let (val_loss, _) = mlp_loss_and_grad(&params, &xv, &yv);
        if !val_loss.is_finite() {
            return Err(Error::Metric("MLP validation loss is not finite".into()));
        }
        if val_loss < best.0 - 1e-4 {
            best = (val_loss, params.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    Ok(logits(&best.1, &xt).into_iter().map(|z| 1.0 / (1.0 + (-z).exp())).collect())
}
