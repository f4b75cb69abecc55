//! Dormand–Prince 5(4) integration and flow sampling.

mod sample;

pub use sample::{sample_field, sample_posterior, FlowField, VectorField};

use crate::{Error, Matrix, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub rtol: f64,
    pub atol: f64,
    /// First trial step. `None` picks one from the local scale of the problem.
    #[serde(default)]
    pub initial_step: Option<f64>,
    pub max_steps: usize,
    pub safety: f64,
    pub min_factor: f64,
    pub max_factor: f64,
    /// Take exactly this many equal steps with error control disabled.
    #[serde(default)]
    pub fixed_steps: Option<usize>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            rtol: 1e-7,
            atol: 1e-7,
            initial_step: None,
            max_steps: 100_000,
            safety: 0.9,
            min_factor: 0.2,
            max_factor: 10.0,
            fixed_steps: None,
        }
    }
}

impl SolverConfig {
    pub fn with_tolerance(tol: f64) -> Self {
        Self { rtol: tol, atol: tol, ..Self::default() }
    }

    pub fn fixed(steps: usize) -> Self {
        Self { fixed_steps: Some(steps), ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.rtol > 0.0 && self.atol > 0.0) {
            problems.push(format!("tolerances must be positive, got rtol {} atol {}", self.rtol, self.atol));
        }
        if self.max_steps == 0 {
            problems.push("max_steps must be at least 1".to_string());
        }
        if !(self.safety > 0.0 && self.safety <= 1.0) {
            problems.push(format!("safety must be in (0, 1], got {}", self.safety));
        }
        if !(self.min_factor > 0.0 && self.min_factor < 1.0 && self.max_factor > 1.0) {
            problems.push(format!(
                "step factors need 0 < min < 1 < max, got {} and {}",
                self.min_factor, self.max_factor
            ));
        }
        if let Some(h) = self.initial_step {
            if !(h > 0.0) {
                problems.push(format!("initial_step must be positive, got {h}"));
            }
        }
        if self.fixed_steps == Some(0) {
            problems.push("fixed_steps must be at least 1".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolverStats {
    pub steps: usize,
    pub rejects: usize,
    pub f_evals: usize,
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
/// Fifth-order weights minus the embedded fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];
const BETA: f64 = 0.04;
const EXPO: f64 = 0.2 - BETA * 0.75;

/// Integrate `y' = f(t, y)` from `t0` to `t1`.
pub fn dopri5<F>(mut f: F, y0: &[f64], t0: f64, t1: f64, cfg: &SolverConfig) -> Result<(Vec<f64>, SolverStats)>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    let y0 = Matrix::row_vector(y0.to_vec());
    let mut out = dopri5_batch(
        |ts: &[f64], ys: &Matrix, dy: &mut Matrix| {
            for r in 0..ys.rows() {
                f(ts[r], ys.row(r), dy.row_mut(r))?;
            }
            Ok(())
        },
        &y0,
        t0,
        t1,
        cfg,
    )?;
    out.pop().expect("one trajectory")
}

struct Draw {
    t: f64,
    h: f64,
    y: Vec<f64>,
    k: [Vec<f64>; 7],
    facold: f64,
    rejected: bool,
    stats: SolverStats,
    failure: Option<Error>,
    done: bool,
    last: bool,
}

/// Integrate many independent initial values in lockstep. Each row keeps its
/// own step size and error control; only the right-hand side evaluations are
/// shared, `f(ts, ys, out)` receiving one row per live trajectory.
///
/// The outer error is reserved for invalid arguments. Per-row failures
/// (step limit, non-finite derivatives) are reported in the returned vector.
pub fn dopri5_batch<F>(
    mut f: F,
    y0: &Matrix,
    t0: f64,
    t1: f64,
    cfg: &SolverConfig,
) -> Result<Vec<Result<(Vec<f64>, SolverStats)>>>
where
    F: FnMut(&[f64], &Matrix, &mut Matrix) -> Result<()>,
{
    cfg.validate()?;
    if !(t1 > t0) || !t0.is_finite() || !t1.is_finite() {
        return Err(Error::Domain(format!("integration needs finite t1 > t0, got [{t0}, {t1}]")));
    }
    let d = y0.cols();
    let span = t1 - t0;
    let mut draws: Vec<Draw> = y0
        .iter_rows()
        .map(|y| Draw {
            t: t0,
            h: 0.0,
            y: y.to_vec(),
            k: std::array::from_fn(|_| vec![0.0; d]),
            facold: 1e-4,
            rejected: false,
            stats: SolverStats::default(),
            failure: None,
            done: false,
            last: false,
        })
        .collect();

    // First derivative at the start.
    let all: Vec<usize> = (0..draws.len()).collect();
    evaluate(&mut f, &mut draws, &all, d, |dr| (dr.t, dr.y.clone()), 0)?;

    for dr in draws.iter_mut().filter(|dr| dr.failure.is_none()) {
        dr.h = match (cfg.fixed_steps, cfg.initial_step) {
            (Some(n), _) => span / n as f64,
            (None, Some(h)) => h.min(span),
            (None, None) => 0.0,
        };
    }
    if cfg.fixed_steps.is_none() && cfg.initial_step.is_none() {
        initial_steps(&mut f, &mut draws, d, span, cfg)?;
    }

    loop {
        let live: Vec<usize> = (0..draws.len()).filter(|&i| !draws[i].done && draws[i].failure.is_none()).collect();
        if live.is_empty() {
            break;
        }
        let mut stepping = Vec::with_capacity(live.len());
        for &i in &live {
            let dr = &mut draws[i];
            if dr.stats.steps + dr.stats.rejects >= cfg.max_steps {
                dr.failure = Some(Error::Solver(format!("max_steps {} exceeded at t = {}", cfg.max_steps, dr.t)));
                continue;
            }
            let remaining = t1 - dr.t;
            if cfg.fixed_steps.is_none() && dr.h <= 1e-14 * dr.t.abs().max(span) {
                dr.failure = Some(Error::Solver(format!("step size underflow at t = {}", dr.t)));
                continue;
            }
            dr.last = match cfg.fixed_steps {
                Some(n) => dr.stats.steps + 1 == n,
                None => dr.h * 1.01 >= remaining,
            };
            if dr.last {
                dr.h = remaining;
            }
            stepping.push(i);
        }
        for s in 1..7 {
            let idx: Vec<usize> = stepping.iter().copied().filter(|&i| draws[i].failure.is_none()).collect();
            evaluate(&mut f, &mut draws, &idx, d, |dr| stage_point(dr, s, d), s)?;
        }
        for &i in &stepping {
            let dr = &mut draws[i];
            if dr.failure.is_some() {
                continue;
            }
            let (_, y_new) = stage_point(dr, 6, d);
            if cfg.fixed_steps.is_some() {
                let last = dr.last;
                accept(dr, y_new, t1, last);
                continue;
            }
            let mut acc = 0.0;
            for j in 0..d {
                let e: f64 = dr.h * (0..7).map(|s| E[s] * dr.k[s][j]).sum::<f64>();
                let sc = cfg.atol + cfg.rtol * dr.y[j].abs().max(y_new[j].abs());
                acc += (e / sc).powi(2);
            }
            let err = if d == 0 { 0.0 } else { (acc / d as f64).sqrt() };
            let fac11 = err.powf(EXPO);
            if err <= 1.0 {
                let fac = (fac11 / dr.facold.powf(BETA) / cfg.safety).clamp(1.0 / cfg.max_factor, 1.0 / cfg.min_factor);
                let mut h_new = dr.h / fac;
                if dr.rejected {
                    h_new = h_new.min(dr.h);
                }
                dr.facold = err.max(1e-4);
                let last = dr.last;
                accept(dr, y_new, t1, last);
                dr.h = h_new;
            } else {
                dr.h /= (fac11 / cfg.safety).min(1.0 / cfg.min_factor);
                dr.rejected = true;
                dr.stats.rejects += 1;
            }
        }
    }

    Ok(draws
        .into_iter()
        .map(|dr| match dr.failure {
            Some(e) => Err(e),
            None => Ok((dr.y, dr.stats)),
        })
        .collect())
}

fn accept(dr: &mut Draw, y_new: Vec<f64>, t1: f64, last: bool) {
    dr.t = if last { t1 } else { dr.t + dr.h };
    dr.y = y_new;
    dr.k.swap(0, 6);
    dr.rejected = false;
    dr.stats.steps += 1;
    dr.done = last;
}

/// Argument of stage `s`; stage 6 is the fifth-order solution.
fn stage_point(dr: &Draw, s: usize, d: usize) -> (f64, Vec<f64>) {
    let y = (0..d)
        .map(|j| dr.y[j] + dr.h * (0..s).map(|q| A[s][q] * dr.k[q][j]).sum::<f64>())
        .collect();
    (dr.t + C[s] * dr.h, y)
}

/// Evaluate `f` at `point(draw)` for the given draws and store into `k[slot]`.
fn evaluate<F>(
    f: &mut F,
    draws: &mut [Draw],
    idx: &[usize],
    d: usize,
    point: impl Fn(&Draw) -> (f64, Vec<f64>),
    slot: usize,
) -> Result<()>
where
    F: FnMut(&[f64], &Matrix, &mut Matrix) -> Result<()>,
{
    if idx.is_empty() {
        return Ok(());
    }
    let mut ts = Vec::with_capacity(idx.len());
    let mut ys = Matrix::zeros(idx.len(), d);
    for (r, &i) in idx.iter().enumerate() {
        let (t, y) = point(&draws[i]);
        ts.push(t);
        ys.row_mut(r).copy_from_slice(&y);
    }
    let mut out = Matrix::zeros(idx.len(), d);
    let res = f(&ts, &ys, &mut out);
    for (r, &i) in idx.iter().enumerate() {
        let dr = &mut draws[i];
        dr.stats.f_evals += 1;
        if let Err(e) = &res {
            dr.failure = Some(Error::Solver(format!("right-hand side failed at t = {}: {e}", ts[r])));
        } else if out.row(r).iter().any(|v| !v.is_finite()) {
            dr.failure = Some(Error::Solver(format!("non-finite derivative at t = {}", ts[r])));
        } else {
            dr.k[slot].copy_from_slice(out.row(r));
        }
    }
    Ok(())
}

fn rms(v: impl Iterator<Item = f64>, d: usize) -> f64 {
    (v.map(|x| x * x).sum::<f64>() / d.max(1) as f64).sqrt()
}

/// Automatic first step: start from a scale estimate (or `span / 100` when
/// the solution or its derivative vanishes), probe with an Euler step and
/// rescale so the leading error term is about the tolerance.
fn initial_steps<F>(f: &mut F, draws: &mut [Draw], d: usize, span: f64, cfg: &SolverConfig) -> Result<()>
where
    F: FnMut(&[f64], &Matrix, &mut Matrix) -> Result<()>,
{
    let idx: Vec<usize> = (0..draws.len()).filter(|&i| draws[i].failure.is_none()).collect();
    let mut h0 = vec![0.0; draws.len()];
    let mut d1s = vec![0.0; draws.len()];
    for &i in &idx {
        let dr = &draws[i];
        let sk: Vec<f64> = dr.y.iter().map(|v| cfg.atol + cfg.rtol * v.abs()).collect();
        let d0 = rms((0..d).map(|j| dr.y[j] / sk[j]), d);
        let d1 = rms((0..d).map(|j| dr.k[0][j] / sk[j]), d);
        h0[i] = if d0 < 1e-5 || d1 < 1e-5 { span / 100.0 } else { (0.01 * d0 / d1).min(span) };
        d1s[i] = d1;
    }
    // Euler probe of length h0 lands in slot 1, which the first step overwrites.
    for &i in &idx {
        draws[i].h = h0[i];
    }
    evaluate(
        f,
        draws,
        &idx,
        d,
        |dr| (dr.t + dr.h, dr.y.iter().zip(&dr.k[0]).map(|(y, k)| y + dr.h * k).collect()),
        1,
    )?;
    for &i in &idx {
        let dr = &mut draws[i];
        if dr.failure.is_some() {
            continue;
        }
        let sk: Vec<f64> = dr.y.iter().map(|v| cfg.atol + cfg.rtol * v.abs()).collect();
        let d2 = rms((0..d).map(|j| (dr.k[1][j] - dr.k[0][j]) / sk[j]), d) / h0[i];
        let m = d1s[i].max(d2);
        let h1 = if m <= 1e-15 { span } else { (0.01 / m).powf(0.2) };
        dr.h = (100.0 * h0[i]).min(h1).min(span);
    }
    Ok(())
}
