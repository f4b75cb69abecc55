use super::{dopri5_batch, SolverConfig};
use crate::autodiff::unpack_gaussian;
use crate::flow::{FlowConfig, Objective};
use crate::nn::{DecoderContext, HeadKind, Model};
use crate::probmodels::distributions::std_normal;
use crate::samples::{DrawFailure, SampleMeta, SampleSet};
use crate::{Error, Matrix, Real, Result, Tensor};
use rand::Rng;
use rayon::prelude::*;
use std::time::Instant;

/// A dataset-conditioned velocity field `v(z, t | x)`.
pub trait VectorField: Sync {
    type Context: Sync;

    fn latent_dim(&self) -> usize;

    /// Work shared by every draw for one dataset (the encoder pass).
    fn prepare(&self, data: &Matrix) -> Result<Self::Context>;

    /// Row `i` of `out` is the field at row `i` of `zs` and time `ts[i]`.
    fn eval(&self, ctx: &Self::Context, ts: &[f64], zs: &Matrix, out: &mut Matrix) -> Result<()>;

    /// Integration interval; base draws live at the start.
    fn time_span(&self) -> (f64, f64) {
        (0.0, 1.0)
    }
}

/// The sampling ODE of a trained vector-field model under its objective.
pub struct FlowField<'a, T: Real> {
    pub model: &'a Model<T>,
    pub flow: FlowConfig,
}

impl<'a, T: Real> FlowField<'a, T> {
    pub fn new(model: &'a Model<T>, flow: FlowConfig) -> Result<Self> {
        flow.validate()?;
        if model.cfg.head != HeadKind::VectorField || flow.objective == Objective::Gaussian {
            return Err(Error::Config(format!(
                "objective {:?} with a {:?} head does not define a flow",
                flow.objective, model.cfg.head
            )));
        }
        Ok(Self { model, flow })
    }
}

impl<T: Real> VectorField for FlowField<'_, T> {
    type Context = DecoderContext<T>;

    fn latent_dim(&self) -> usize {
        self.model.cfg.latent_dim
    }

    fn prepare(&self, data: &Matrix) -> Result<DecoderContext<T>> {
        self.model.prepare(data)
    }

    fn eval(&self, ctx: &DecoderContext<T>, ts: &[f64], zs: &Matrix, out: &mut Matrix) -> Result<()> {
        let tt: Vec<T> = ts.iter().map(|&t| T::c(t)).collect();
        let res = self.model.eval_batch(ctx, &zs.cast(), &tt)?;
        for r in 0..zs.rows() {
            let o = out.row_mut(r);
            let v = res.row(r);
            if self.flow.objective == Objective::VpSm {
                // probability-flow ODE of the VP path, run forward in flow time
                let b = 0.5 * self.flow.vp.beta(1.0 - ts[r]);
                for (j, o) in o.iter_mut().enumerate() {
                    *o = b * (zs.get(r, j) + v[j].f64());
                }
            } else {
                for (o, v) in o.iter_mut().zip(v) {
                    *o = v.f64();
                }
            }
        }
        Ok(())
    }

    fn time_span(&self) -> (f64, f64) {
        (0.0, self.flow.t_max())
    }
}

/// Draws integrated together per rayon task.
const LOCKSTEP: usize = 256;

/// Push `n` standard-normal base draws through `field` conditioned on `data`.
/// The dataset is prepared once. Draws whose trajectory fails are left out
/// of the result and listed in `meta.failures`.
pub fn sample_field<V: VectorField, R: Rng + ?Sized>(
    field: &V,
    data: &Matrix,
    n: usize,
    solver: &SolverConfig,
    rng: &mut R,
) -> Result<SampleSet> {
    solver.validate()?;
    let start = Instant::now();
    let d = field.latent_dim();
    let ctx = field.prepare(data)?;
    let base = Matrix::from_vec(n, d, (0..n * d).map(|_| std_normal(rng)).collect());
    let (t0, t1) = field.time_span();
    let chunks: Vec<Vec<usize>> = (0..n).collect::<Vec<_>>().chunks(LOCKSTEP).map(<[usize]>::to_vec).collect();
    let results = chunks
        .par_iter()
        .map(|idx| {
            let y0 = base.select_rows(idx);
            dopri5_batch(|ts: &[f64], ys: &Matrix, out: &mut Matrix| field.eval(&ctx, ts, ys, out), &y0, t0, t1, solver)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(n * d);
    let mut meta = SampleMeta { method: "flow".to_string(), ..SampleMeta::default() };
    for (i, res) in results.into_iter().flatten().enumerate() {
        match res {
            Ok((y, stats)) => {
                rows.extend(y);
                meta.solver.push(stats);
            }
            Err(e) => meta.failures.push(DrawFailure { index: i, reason: e.to_string() }),
        }
    }
    if !meta.failures.is_empty() {
        log::warn!("{} of {n} draws failed to integrate", meta.failures.len());
    }
    meta.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    let draws = Matrix::from_vec(meta.solver.len(), d, rows);
    Ok(SampleSet { draws, names: crate::samples::default_names(d), meta })
}

/// Posterior draws from a trained model: ODE integration for vector-field
/// heads, direct Gaussian draws for the Gaussian head.
pub fn sample_posterior<T: Real, R: Rng + ?Sized>(
    model: &Model<T>,
    flow: &FlowConfig,
    data: &Matrix,
    n: usize,
    solver: &SolverConfig,
    rng: &mut R,
) -> Result<SampleSet> {
    if data.cols() != model.cfg.input_dim {
        return Err(Error::Dimension(format!(
            "dataset rows have width {}, model expects {}",
            data.cols(),
            model.cfg.input_dim
        )));
    }
    if flow.objective != Objective::Gaussian {
        return sample_field(&FlowField::new(model, *flow)?, data, n, solver, rng);
    }
    let start = Instant::now();
    let d = model.cfg.latent_dim;
    let ctx = model.prepare(data)?;
    let out: Vec<f64> = model.gaussian_params(&ctx)?.iter().map(|v| v.f64()).collect();
    let (mean, l) = unpack_gaussian(&out, d);
    let mut draws = Tensor::zeros(n, d);
    for r in 0..n {
        let eps: Vec<f64> = (0..d).map(|_| std_normal(rng)).collect();
        for i in 0..d {
            let v = mean[i] + (0..=i).map(|j| l[i * d + j] * eps[j]).sum::<f64>();
            draws.set(r, i, v);
        }
    }
    let mut set = SampleSet::new(draws, "gaussian-head");
    set.meta.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(set)
}
