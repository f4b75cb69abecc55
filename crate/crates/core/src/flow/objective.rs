use rand::Rng;
use rayon::prelude::*;

use super::{cfm_target, conditional_path, vp_path, vp_target, FlowConfig, Objective};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{HeadKind, Model};
use crate::probmodels::distributions::std_normal;
use crate::probmodels::{sample_dataset, ScenarioConfig};
use crate::rng;
use crate::tensor::{Matrix, Real, Tensor};

/// One training tuple: a dataset, a base draw, a latent draw and a time.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub data: Matrix,
    pub z0: Vec<f64>,
    pub z1: Vec<f64>,
    pub t: f64,
}

/// Draw `(x, z1)` from the scenario, `z0 ~ N(0, I)` and `t` uniform over the
/// objective's time range.
pub fn make_training_example<R: Rng + ?Sized>(scenario: &ScenarioConfig, flow: &FlowConfig, rng: &mut R) -> Result<Example> {
    let (data, latent) = sample_dataset(scenario, rng)?;
    let z0 = (0..latent.dim()).map(|_| std_normal(rng)).collect();
    let t = rng.random::<f64>() * flow.t_max();
    Ok(Example { data: data.rows, z0, z1: latent.values, t })
}

fn check_head(model_head: HeadKind, objective: Objective) -> Result<()> {
    let want = if objective == Objective::Gaussian { HeadKind::Gaussian } else { HeadKind::VectorField };
    if model_head == want {
        Ok(())
    } else {
        Err(Error::Config(format!("objective {objective:?} needs a {want:?} head, model has {model_head:?}")))
    }
}

/// Squared-error or likelihood loss of one example, recorded on `tape`.
pub fn example_loss<'a, T: Real>(
    model: &'a Model<T>,
    tape: &mut Tape<'a, T>,
    data: &'a Tensor<T>,
    ex: &Example,
    flow: &FlowConfig,
    dropout: Option<&mut dyn rand::RngCore>,
) -> Result<Var> {
    check_head(model.cfg.head, flow.objective)?;
    let cast = |v: Vec<f64>| v.into_iter().map(T::c).collect::<Vec<T>>();
    let (zt, t) = match flow.objective {
        Objective::OtFm => (conditional_path(&ex.z0, &ex.z1, ex.t, flow)?, ex.t),
        Objective::VpFm | Objective::VpSm => (vp_path(&ex.z0, &ex.z1, ex.t, &flow.vp)?, ex.t),
        Objective::Gaussian => (vec![0.0; ex.z1.len()], 0.0),
    };
    let out = model.forward_tape(tape, data, &cast(zt), T::c(t), dropout)?;
    match flow.objective {
        Objective::OtFm | Objective::VpFm => {
            let target = if flow.objective == Objective::OtFm {
                cfm_target(&ex.z0, &ex.z1, flow)?
            } else {
                vp_target(&ex.z0, &ex.z1, ex.t, &flow.vp)?
            };
            let y = tape.constant(Tensor::row_vector(cast(target)));
            let r = tape.sub(out, y);
            Ok(tape.sum_squares(r))
        }
        Objective::VpSm => {
            // sigma^2 || s(x) + z0 / sigma ||^2 = || sigma s(x) + z0 ||^2
            let (_, sd) = flow.vp.coeffs(1.0 - ex.t);
            let scaled = tape.scale(out, T::c(sd));
            let y = tape.constant(Tensor::row_vector(cast(ex.z0.iter().map(|v| -v).collect())));
            let r = tape.sub(scaled, y);
            Ok(tape.sum_squares(r))
        }
        Objective::Gaussian => Ok(tape.gaussian_nll(out, &cast(ex.z1.clone()))),
    }
}

/// Examples per gradient chunk. Chunks are reduced in index order so the
/// result does not depend on the number of worker threads.
const CHUNK: usize = 8;

/// Mean loss over the batch and its exact gradient, one tensor per parameter.
/// With `dropout_seed`, example `i` draws its dropout masks from stream `i`.
pub fn loss_and_grad<T: Real>(
    model: &Model<T>,
    batch: &[Example],
    flow: &FlowConfig,
    dropout_seed: Option<u64>,
) -> Result<(f64, Vec<Tensor<T>>)> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let scale = T::c(1.0 / batch.len() as f64);
    let partial: Vec<Result<(f64, Vec<Tensor<T>>)>> = batch
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(c, chunk)| {
            let mut grads = model.params.zeros_like();
            let mut total = 0.0;
            for (j, ex) in chunk.iter().enumerate() {
                let data = ex.data.cast::<T>();
                let mut tape = Tape::new();
                let mut drng = dropout_seed.map(|s| rng::stream(s, (c * CHUNK + j) as u64));
                let loss = example_loss(
                    model,
                    &mut tape,
                    &data,
                    ex,
                    flow,
                    drng.as_mut().map(|r| r as &mut dyn rand::RngCore),
                )?;
                let v = tape.value(loss).data()[0].f64();
                if !v.is_finite() {
                    return Err(Error::eval("loss"));
                }
                total += v;
                tape.backward(loss, scale, &mut grads);
            }
            Ok((total, grads))
        })
        .collect();
    let mut loss = 0.0;
    let mut grads: Option<Vec<Tensor<T>>> = None;
    for p in partial {
        let (l, g) = p?;
        loss += l;
        match grads.as_mut() {
            None => grads = Some(g),
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(&g) {
                    for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                        *x = *x + *y;
                    }
                }
            }
        }
    }
    Ok((loss / batch.len() as f64, grads.expect("nonempty batch")))
}

/// Mean loss without gradients (evaluation mode).
pub fn mean_loss<T: Real>(model: &Model<T>, batch: &[Example], flow: &FlowConfig) -> Result<f64> {
    let losses: Vec<Result<f64>> = batch
        .par_iter()
        .map(|ex| {
            let data = ex.data.cast::<T>();
            let mut tape = Tape::new();
            let l = example_loss(model, &mut tape, &data, ex, flow, None)?;
            Ok(tape.value(l).data()[0].f64())
        })
        .collect();
    let mut s = 0.0;
    for l in losses {
        s += l?;
    }
    Ok(s / batch.len() as f64)
}
