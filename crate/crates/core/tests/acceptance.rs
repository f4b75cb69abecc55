//! Acceptance criteria A1 to A11, one pass/fail line each.
//!
//! `cargo test -p ctxflow-core --test acceptance` runs all of them; extra
//! arguments such as `A4 A10` select a subset.

use std::cell::RefCell;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use ctxflow::dataprep::{apply_record, load_csv, preprocess, write_csv, yeo_johnson_value, yeo_johnson_with, PrepConfig, PreprocessRecord};
use ctxflow::flow::{loss_and_grad, make_training_example, train, Example, FlowConfig, Objective, TrainLog, TrainOptions, TrainerConfig};
use ctxflow::flow::objective::mean_loss;
use ctxflow::infer::{advi, laplace_approximation, reference_samples, AdviConfig, AdviFamily, LogDensity, MapConfig, Method, ReferenceConfig};
use ctxflow::metrics::{c2st, mmd, wasserstein2, C2stConfig, Estimator, MmdConfig};
use ctxflow::nn::{HeadKind, Model, ModelConfig};
use ctxflow::ode::{dopri5, sample_posterior};
use ctxflow::probmodels::distributions::{std_normal, InverseGamma};
use ctxflow::probmodels::layout::lower_tri_indices;
use ctxflow::probmodels::{
    analytic_posterior, log_joint, sample_dataset, sample_with_target, CoeffPrior, FactorPrior, NoisePrior, PosteriorKind,
    Transform,
};
use ctxflow::rng::stream;
use ctxflow::{ContextDataset, Family, Matrix, Result, ScenarioConfig, SolverConfig};
use rand::seq::SliceRandom;
use rand::Rng;

const SEED: u64 = 20_240_601;
const TRAIN_SAMPLES: usize = 200_000;
const N_TEST: u64 = 20;
const N_DRAWS: usize = 1000;

type Outcome = std::result::Result<String, String>;

fn fail<T>(msg: impl Into<String>) -> std::result::Result<T, String> {
    Err(msg.into())
}

fn ok<T>(r: Result<T>) -> std::result::Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Models and samples shared by A4 and A10.
#[derive(Default)]
struct Shared {
    toy: Option<Toy>,
}

struct Toy {
    scenario: ScenarioConfig,
    trainer: TrainerConfig,
    datasets: Vec<ContextDataset>,
    analytic: Vec<Matrix>,
    ot_c2st: Vec<f64>,
}

thread_local! {
    static SHARED: RefCell<Shared> = RefCell::new(Shared::default());
}

fn main() {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [(&str, &str, fn() -> Outcome); 11] = [
        ("A1", "Distribution moments", a1),
        ("A2", "ODE solver", a2),
        ("A3", "Gradient correctness", a3),
        ("A4", "End-to-end ICL on a conjugate toy", a4),
        ("A5", "HMC fidelity", a5),
        ("A6", "Metric identities", a6),
        ("A7", "Laplace exactness", a7),
        ("A8", "ADVI", a8),
        ("A9", "Multimodality", a9),
        ("A10", "Objective ablation direction", a10),
        ("A11", "Preprocessing", a11),
    ];
    std::panic::set_hook(Box::new(|info| {
        if let Some(l) = info.location() {
            eprintln!("  panic at {}:{}", l.file(), l.line());
        }
    }));
    let mut failed = 0;
    for (id, title, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|a| a.eq_ignore_ascii_case(id)) {
            continue;
        }
        let start = Instant::now();
        let res = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match res {
            Ok(detail) => println!("{id} PASS {title}: {detail} ({secs:.1}s)"),
            Err(detail) => {
                failed += 1;
                println!("{id} FAIL {title}: {detail} ({secs:.1}s)");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- A1

struct Moments {
    n: f64,
    mean: f64,
    var: f64,
    m4: f64,
}

fn moments(x: &[f64]) -> Moments {
    let n = x.len() as f64;
    let m = mean(x);
    let var = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    let m4 = x.iter().map(|v| (v - m).powi(4)).sum::<f64>() / n;
    Moments { n, mean: m, var, m4 }
}

/// Empirical mean and variance within 4 standard errors of the closed forms.
fn check_moments(label: &str, x: &[f64], want_mean: f64, want_var: f64) -> std::result::Result<(), String> {
    let m = moments(x);
    let se_mean = (want_var / m.n).sqrt();
    let se_var = ((m.m4 - m.var * m.var).max(0.0) / m.n).sqrt();
    let zm = (m.mean - want_mean) / se_mean;
    let zv = (m.var - want_var) / se_var;
    if zm.abs() > 4.0 || zv.abs() > 4.0 {
        return fail(format!(
            "{label}: mean {:.5} vs {want_mean:.5} (z {zm:.2}), var {:.5} vs {want_var:.5} (z {zv:.2})",
            m.mean, m.var
        ));
    }
    Ok(())
}

fn ig_moments(shape: f64, scale: f64) -> (f64, f64) {
    (scale / (shape - 1.0), scale * scale / ((shape - 1.0).powi(2) * (shape - 2.0)))
}

fn factor_moments(p: FactorPrior) -> (f64, f64) {
    match p {
        FactorPrior::Normal { var } => (0.0, var),
        FactorPrior::Laplace { scale } => (0.0, 2.0 * scale * scale),
    }
}

/// Moments of `|d|` for one draw `d` of the factor prior.
fn abs_factor_moments(p: FactorPrior) -> (f64, f64) {
    use std::f64::consts::PI;
    match p {
        FactorPrior::Normal { var } => ((2.0 * var / PI).sqrt(), var * (1.0 - 2.0 / PI)),
        FactorPrior::Laplace { scale } => (scale, scale * scale),
    }
}

/// Closed-form prior moments for the checked coordinates of every block:
/// `(label, block index, entry within the constrained block, mean, var)`.
fn prior_checks(cfg: &ScenarioConfig) -> Vec<(String, usize, usize, f64, f64)> {
    let layout = cfg.target_layout();
    let mut out = Vec::new();
    for (bi, b) in layout.blocks.iter().enumerate() {
        let mut push = |entry: usize, m: f64, v: f64| out.push((format!("{}[{entry}]", b.name), bi, entry, m, v));
        match (cfg.family, b.name.as_str()) {
            (Family::GLM, "beta") => {
                let (m, v) = match cfg.coeff_prior {
                    CoeffPrior::Normal { var } => (0.0, var),
                    CoeffPrior::ConjugateNormal { var } => {
                        let (a, s) = cfg.ig_noise().expect("conjugate prior needs IG noise");
                        (0.0, var * ig_moments(a, s).0)
                    }
                    CoeffPrior::Laplace { scale } => (0.0, 2.0 * scale * scale),
                    CoeffPrior::Gamma { shape, rate } => (shape / rate, shape / (rate * rate)),
                };
                push(0, m, v);
            }
            (Family::GLM, "beta0") => push(0, 0.0, cfg.intercept_prior_var),
            (Family::GLM, "sigma2") | (Family::GMM, "sigma2") => {
                let (a, s) = cfg.ig_noise().expect("IG noise");
                let (m, v) = ig_moments(a, s);
                push(0, m, v);
            }
            (Family::FA, "z") => {
                let (m, v) = factor_moments(cfg.fa_priors.z_prior);
                push(0, m, v);
            }
            (Family::FA, "mu") => push(0, 0.0, cfg.fa_priors.mu_var),
            (Family::FA, "psi") => {
                let (m, v) = ig_moments(cfg.fa_priors.psi_shape, cfg.fa_priors.psi_scale);
                push(0, m, v);
            }
            (Family::FA, "W") => {
                let Transform::AbsDiagLog { rows, cols } = b.transform else { panic!("W layout") };
                let tri = lower_tri_indices(rows, cols);
                let diag = tri.iter().position(|&(i, j)| i == j).expect("diagonal");
                let (m, v) = abs_factor_moments(cfg.fa_priors.w_prior);
                push(diag, m, v);
                if let Some(off) = tri.iter().position(|&(i, j)| i != j) {
                    let (m, v) = factor_moments(cfg.fa_priors.w_prior);
                    push(off, m, v);
                }
            }
            (Family::GMM, "mu") => {
                let (a, s) = cfg.ig_noise().expect("IG noise");
                push(0, 0.0, cfg.lambda_mean_scale * ig_moments(a, s).0);
            }
            (Family::GMM, "phi") => {
                let (m, alpha) = (cfg.m as f64, cfg.dirichlet_alpha);
                let p = 1.0 / m;
                push(0, p, p * (1.0 - p) / (m * alpha + 1.0));
                push(cfg.m - 1, p, p * (1.0 - p) / (m * alpha + 1.0));
            }
            (f, n) => panic!("no prior oracle for {f:?} block {n}"),
        }
    }
    out
}

fn a1() -> Outcome {
    let mut rng = stream(SEED, 1);
    let ig = ok(InverseGamma::new(5.0, 2.0))?;
    let draws: Vec<f64> = (0..1_000_000).map(|_| ig.sample(&mut rng)).collect();
    let (m, v) = ig_moments(5.0, 2.0);
    check_moments("InverseGamma(5, 2)", &draws, m, v)?;
    let ig_stats = moments(&draws);

    let n = 100_000;
    let mut checked = 0;
    for (si, id) in ScenarioConfig::ids().iter().enumerate() {
        let mut cfg = ok(ScenarioConfig::by_id(id))?;
        cfg.k = 1;
        let layout = cfg.target_layout();
        let checks = prior_checks(&cfg);
        let mut cols: Vec<Vec<f64>> = vec![Vec::with_capacity(n); checks.len()];
        let mut rng = stream(SEED, 100 + si as u64);
        for _ in 0..n {
            let (_, target) = ok(sample_with_target(&cfg, &mut rng))?;
            let blocks = ok(layout.constrain(&target))?;
            for (c, (_, bi, entry, _, _)) in checks.iter().enumerate() {
                cols[c].push(blocks[*bi][*entry]);
            }
        }
        for ((label, _, _, m, v), col) in checks.iter().zip(&cols) {
            check_moments(&format!("{id} {label}"), col, *m, *v)?;
            checked += 1;
        }
    }
    Ok(format!(
        "IG(5,2) mean {:.5} var {:.5}; {checked} prior coordinates over {} scenarios within 4 SE",
        ig_stats.mean,
        ig_stats.var,
        ScenarioConfig::ids().len()
    ))
}

// ---------------------------------------------------------------- A2

fn decay(_t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
    dy[0] = -y[0];
    Ok(())
}

fn a2() -> Outcome {
    let exact = (-1.0f64).exp();
    let (y, stats) = ok(dopri5(decay, &[1.0], 0.0, 1.0, &SolverConfig::with_tolerance(1e-7)))?;
    let err = (y[0] - exact).abs();
    if err > 1e-7 {
        return fail(format!("endpoint error {err:.3e} > 1e-7"));
    }
    let pts: Vec<(f64, f64)> = [4usize, 8, 16, 32]
        .iter()
        .map(|&n| {
            let (y, _) = dopri5(decay, &[1.0], 0.0, 1.0, &SolverConfig::fixed(n)).expect("fixed-step run");
            ((1.0 / n as f64).ln(), (y[0] - exact).abs().ln())
        })
        .collect();
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    if (slope - 5.0).abs() > 0.2 {
        return fail(format!("fixed-step slope {slope:.3}"));
    }
    Ok(format!("endpoint error {err:.2e} in {} steps; fixed-step slope {slope:.3}", stats.steps))
}

// ---------------------------------------------------------------- A3

fn stencil(f: impl Fn(f64) -> f64, h: f64) -> f64 {
    (-f(2.0 * h) + 8.0 * f(h) - 8.0 * f(-h) + f(-2.0 * h)) / (12.0 * h)
}

fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-12 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

fn tiny_model(cfg: &ScenarioConfig, head: HeadKind, seed: u64) -> Model<f64> {
    let mut c = ModelConfig::desk(cfg.latent_dim(), cfg.row_width());
    c.d_model = 8;
    c.d_ff = 12;
    c.n_heads = 2;
    c.n_encoder_layers = 1;
    c.n_decoder_blocks = 1;
    c.head = head;
    let mut m = Model::<f64>::new(c, seed).expect("tiny model");
    m.params.perturb(seed ^ 0x5EED, 0.3);
    m
}

fn shifted(model: &Model<f64>, dir: &[Vec<f64>], h: f64) -> Model<f64> {
    let mut m = model.clone();
    for (t, d) in m.params.tensors_mut().iter_mut().zip(dir) {
        for (v, dv) in t.data_mut().iter_mut().zip(d) {
            *v += h * dv;
        }
    }
    m
}

/// Worst relative error of one model case: along the gradient, along a random
/// unit direction, and on the ten largest gradient coordinates.
fn model_case(model: &Model<f64>, batch: &[Example], flow: &FlowConfig, seed: u64) -> std::result::Result<f64, String> {
    let (_, grads) = ok(loss_and_grad(model, batch, flow, None))?;
    let flat: Vec<f64> = grads.iter().flat_map(|g| g.data().iter().copied()).collect();
    let shapes: Vec<usize> = grads.iter().map(|g| g.len()).collect();
    let unflatten = |v: &[f64]| {
        let mut out = Vec::new();
        let mut off = 0;
        for &n in &shapes {
            out.push(v[off..off + n].to_vec());
            off += n;
        }
        out
    };
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut dirs: Vec<Vec<f64>> = Vec::new();
    let gn = norm(&flat);
    dirs.push(flat.iter().map(|g| g / gn).collect());
    let mut rng = stream(seed, 7);
    let r: Vec<f64> = (0..flat.len()).map(|_| std_normal(&mut rng)).collect();
    let rn = norm(&r);
    dirs.push(r.iter().map(|x| x / rn).collect());
    let mut order: Vec<usize> = (0..flat.len()).collect();
    order.sort_by(|&a, &b| flat[b].abs().total_cmp(&flat[a].abs()));
    for &i in order.iter().take(10) {
        let mut e = vec![0.0; flat.len()];
        e[i] = 1.0;
        dirs.push(e);
    }
    let mut worst: f64 = 0.0;
    for d in &dirs {
        let analytic: f64 = d.iter().zip(&flat).map(|(a, b)| a * b).sum();
        let dd = unflatten(d);
        let fd = stencil(|h| mean_loss(&shifted(model, &dd, h), batch, flow).expect("loss"), 1e-4);
        worst = worst.max(rel_err(fd, analytic));
    }
    Ok(worst)
}

fn a3() -> Outcome {
    let sc = ok(ScenarioConfig::by_id("glm-1-mini"))?;
    let mut summary = Vec::new();
    for (oi, obj) in [Objective::OtFm, Objective::VpFm, Objective::VpSm, Objective::Gaussian].into_iter().enumerate() {
        let flow = FlowConfig::with_objective(obj);
        let head = if obj == Objective::Gaussian { HeadKind::Gaussian } else { HeadKind::VectorField };
        let mut worst: f64 = 0.0;
        for case in 0..100u64 {
            let seed = 1000 * oi as u64 + case;
            let model = tiny_model(&sc, head, seed);
            let mut rng = stream(SEED, 30_000 + seed);
            let batch: Vec<Example> = (0..2).map(|_| make_training_example(&sc, &flow, &mut rng)).collect::<Result<_>>().map_err(|e| e.to_string())?;
            worst = worst.max(model_case(&model, &batch, &flow, seed)?);
        }
        if worst > 1e-4 {
            return fail(format!("{obj:?}: relative error {worst:.2e} > 1e-4"));
        }
        summary.push(format!("{obj:?} {worst:.1e}"));
    }

    let mut worst_lj: f64 = 0.0;
    for (si, id) in ScenarioConfig::ids().iter().enumerate() {
        let cfg = ok(ScenarioConfig::by_id(id))?;
        for case in 0..100u64 {
            let mut rng = stream(SEED, 40_000 + 1000 * si as u64 + case);
            let (data, mut z) = ok(sample_with_target(&cfg, &mut rng))?;
            for v in z.iter_mut() {
                *v += 0.1 * std_normal(&mut rng);
            }
            let (_, g) = ok(log_joint(&cfg, &data, &z))?;
            let mut diff2 = 0.0;
            for i in 0..z.len() {
                let fd = stencil(
                    |h| {
                        let mut x = z.clone();
                        x[i] += h;
                        log_joint(&cfg, &data, &x).expect("log joint").0
                    },
                    1e-4,
                );
                diff2 += (fd - g[i]).powi(2);
            }
            let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            let err = diff2.sqrt() / gn.max(1e-12);
            if err > 1e-6 {
                return fail(format!("log_joint {id} case {case}: relative error {err:.2e} > 1e-6"));
            }
            worst_lj = worst_lj.max(err);
        }
    }
    Ok(format!(
        "model max rel err: {}; log_joint max rel err {worst_lj:.1e} over {} scenarios x 100",
        summary.join(", "),
        ScenarioConfig::ids().len()
    ))
}

// ---------------------------------------------------------------- A4 / A10

fn toy_trainer() -> TrainerConfig {
    TrainerConfig { total_samples: TRAIN_SAMPLES, seed: SEED, ..TrainerConfig::default() }
}

fn train_desk(scenario: &ScenarioConfig, trainer: &TrainerConfig, obj: Objective) -> std::result::Result<(Model<f64>, TrainLog), String> {
    let mut mc = ModelConfig::desk(scenario.latent_dim(), scenario.row_width());
    if obj == Objective::Gaussian {
        mc.head = HeadKind::Gaussian;
    }
    let model = ok(Model::<f32>::new(mc, trainer.seed))?;
    let flow = FlowConfig::with_objective(obj);
    let steps = trainer.steps();
    let mut progress = |row: &ctxflow::flow::LogRow| {
        if row.step % 500 == 0 || row.step + 1 == steps {
            eprintln!("  train {obj:?} step {}/{steps} loss {:.4}", row.step, row.train_loss);
        }
    };
    let opts = TrainOptions { on_step: Some(&mut progress), ..TrainOptions::default() };
    let (m, log) = ok(train(trainer, &flow, model, scenario, opts))?;
    Ok((m.cast::<f64>(), log))
}

fn icl_draws(model: &Model<f64>, obj: Objective, data: &ContextDataset, seed: u64) -> std::result::Result<Matrix, String> {
    let flow = FlowConfig::with_objective(obj);
    let set = ok(sample_posterior(model, &flow, &data.rows, N_DRAWS, &SolverConfig::with_tolerance(1e-7), &mut stream(seed, 0)))?;
    if !set.meta.failures.is_empty() {
        return fail(format!("{} ODE failures", set.meta.failures.len()));
    }
    Ok(set.draws)
}

fn c2st_rf(a: &Matrix, b: &Matrix, seed: u64) -> std::result::Result<f64, String> {
    Ok(ok(c2st(a, b, &C2stConfig::default(), &mut stream(seed, 0xC2)))?.value)
}

/// `psi(x)` by upward recurrence and the asymptotic series; `E[ln s2]` of an
/// inverse gamma is `ln(scale) - psi(shape)`.
fn digamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 6.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let f = 1.0 / (x * x);
    acc + x.ln() - 0.5 / x - f * (1.0 / 12.0 - f * (1.0 / 120.0 - f * (1.0 / 252.0 - f * (1.0 / 240.0 - f / 132.0))))
}

fn col_mean(m: &Matrix, c: usize) -> f64 {
    mean(&m.column(c))
}

/// Validation losses averaged over five consecutive chunks.
fn chunked(val: &[(usize, f64)]) -> Vec<f64> {
    let n = val.len();
    (0..5).map(|c| mean(&val[c * n / 5..(c + 1) * n / 5].iter().map(|v| v.1).collect::<Vec<_>>())).collect()
}

fn a4() -> Outcome {
    let scenario = ok(ScenarioConfig::by_id("glm-1-mini"))?;
    let trainer = toy_trainer();
    let (model, log) = train_desk(&scenario, &trainer, Objective::OtFm)?;

    let mut datasets = Vec::new();
    let mut analytic = Vec::new();
    let (mut c2sts, mut w2s, mut nulls, mut mean_err) = (Vec::new(), Vec::new(), Vec::new(), 0.0f64);
    for i in 0..N_TEST {
        let (data, _) = ok(sample_dataset(&scenario, &mut stream(trainer.seed, trainer.test_stream(i))))?;
        let post = ok(analytic_posterior(&scenario, &data))?;
        let ref_a = post.sample(N_DRAWS, &mut stream(SEED, 100 + i));
        let ref_b = post.sample(N_DRAWS, &mut stream(SEED, 200 + i));
        let icl = icl_draws(&model, Objective::OtFm, &data, SEED + 300 + i)?;
        c2sts.push(c2st_rf(&icl, &ref_a, SEED + 400 + i)?);
        w2s.push(ok(wasserstein2(&icl, &ref_a, &mut stream(SEED, 500 + i)))?.value);
        nulls.push(ok(wasserstein2(&ref_b, &ref_a, &mut stream(SEED, 600 + i)))?.value);
        let mut exact: Vec<f64> = post.mean.iter().copied().collect();
        if let PosteriorKind::NormalInverseGamma { a_n, b_n } = post.kind {
            exact.push(b_n.ln() - digamma(a_n));
        }
        for (c, m) in exact.iter().enumerate() {
            mean_err = mean_err.max((col_mean(&icl, c) - m).abs());
        }
        eprintln!("  dataset {i}: c2st {:.3} w2 {:.3} null {:.3}", c2sts[i as usize], w2s[i as usize], nulls[i as usize]);
        datasets.push(data);
        analytic.push(ref_a);
    }
    let (c, w, wn) = (mean(&c2sts), mean(&w2s), mean(&nulls));
    let val = chunked(&log.val_losses());
    let val_ok = val.windows(2).all(|p| p[1] < p[0]) && val[4] < 0.9 * val[0];
    let detail = format!(
        "C2ST {c:.3} (<= 0.65), W2 {w:.3} vs null {wn:.3} (<= 2x); max |mean - analytic| {mean_err:.3}; val loss chunks {:?} {}",
        val.iter().map(|v| (v * 1e3).round() / 1e3).collect::<Vec<_>>(),
        if val_ok { "decreasing" } else { "NOT decreasing" }
    );
    SHARED.with(|s| {
        s.borrow_mut().toy = Some(Toy { scenario, trainer, datasets, analytic, ot_c2st: c2sts.clone() });
    });
    if c <= 0.65 && w <= 2.0 * wn {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn a10() -> Outcome {
    if SHARED.with(|s| s.borrow().toy.is_none()) {
        // A4 fills the shared toy task whether or not its own thresholds hold.
        let _ = a4();
    }
    SHARED.with(|s| {
        let shared = s.borrow();
        let Some(toy) = shared.toy.as_ref() else { return fail("toy task could not be set up") };
        let mut means = Vec::new();
        for obj in [Objective::VpSm, Objective::Gaussian] {
            let (model, _) = train_desk(&toy.scenario, &toy.trainer, obj)?;
            let mut c = Vec::new();
            for (i, data) in toy.datasets.iter().enumerate() {
                let draws = icl_draws(&model, obj, data, SEED + 300 + i as u64)?;
                c.push(c2st_rf(&draws, &toy.analytic[i], SEED + 400 + i as u64)?);
            }
            eprintln!("  {obj:?} mean C2ST {:.3}", mean(&c));
            means.push(mean(&c));
        }
        let ot = mean(&toy.ot_c2st);
        let (vpsm, gauss) = (means[0], means[1]);
        let detail = format!("C2ST OT-FM {ot:.3}, VP-SM {vpsm:.3}, Gaussian head {gauss:.3}");
        if ot <= vpsm && ot <= gauss + 0.02 {
            Ok(detail)
        } else {
            Err(detail)
        }
    })
}

// ---------------------------------------------------------------- A5

fn a5() -> Outcome {
    let scenario = ok(ScenarioConfig::by_id("glm-1"))?;
    let (mut c_hmc, mut c_null, mut worst_rhat) = (Vec::new(), Vec::new(), 0.0f64);
    for i in 0..5u64 {
        let (data, _) = ok(sample_dataset(&scenario, &mut stream(SEED, 700 + i)))?;
        let rc = ReferenceConfig { n_draws: N_DRAWS, seed: SEED + i, ..ReferenceConfig::default() };
        let hmc = ok(reference_samples(Method::Hmc, &scenario, &data, &rc))?;
        let rhat: Vec<f64> = serde_json::from_value(hmc.meta.diagnostics["rhat"].clone()).map_err(|e| e.to_string())?;
        worst_rhat = rhat.iter().fold(worst_rhat, |a, &b| a.max(b));
        let post = ok(analytic_posterior(&scenario, &data))?;
        let a = post.sample(N_DRAWS, &mut stream(SEED, 800 + i));
        let b = post.sample(N_DRAWS, &mut stream(SEED, 900 + i));
        c_hmc.push(c2st_rf(&hmc.draws, &a, SEED + 1000 + i)?);
        c_null.push(c2st_rf(&b, &a, SEED + 1000 + i)?);
    }
    let (h, n) = (mean(&c_hmc), mean(&c_null));
    let detail = format!("C2ST(HMC, analytic) {h:.3} vs null {n:.3} (+0.05); max split-Rhat {worst_rhat:.4}");
    if h <= n + 0.05 && worst_rhat <= 1.05 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- A6

fn a6() -> Outcome {
    let mut rng = stream(SEED, 1100);
    let s = Matrix::from_vec(300, 3, (0..900).map(|_| std_normal(&mut rng)).collect());
    let w_self = ok(wasserstein2(&s, &s, &mut stream(SEED, 1101)))?.value;
    if w_self != 0.0 {
        return fail(format!("W2(S, S) = {w_self:e}"));
    }
    let biased = MmdConfig { estimator: Estimator::Biased, ..MmdConfig::default() };
    let m_self = ok(mmd(&s, &s, &biased))?.value;
    if m_self != 0.0 {
        return fail(format!("biased MMD(S, S) = {m_self:e}"));
    }
    let mut cs = Vec::new();
    for seed in 0..20u64 {
        let mut rng = stream(SEED + seed, 1102);
        let a = Matrix::from_vec(500, 5, (0..2500).map(|_| std_normal(&mut rng)).collect());
        let b = Matrix::from_vec(500, 5, (0..2500).map(|_| std_normal(&mut rng)).collect());
        cs.push(c2st_rf(&a, &b, SEED + seed)?);
    }
    let c = mean(&cs);
    if !(0.45..=0.55).contains(&c) {
        return fail(format!("same-distribution C2ST {c:.4}"));
    }
    let mut rng = stream(SEED, 1103);
    let a = Matrix::from_vec(10_000, 1, (0..10_000).map(|_| std_normal(&mut rng)).collect());
    let b = Matrix::from_vec(10_000, 1, (0..10_000).map(|_| 2.0 + std_normal(&mut rng)).collect());
    let w = ok(wasserstein2(&a, &b, &mut stream(SEED, 1104)))?.value;
    if !(1.9..=2.1).contains(&w) {
        return fail(format!("W2(N(0,1), N(2,1)) = {w:.4}"));
    }
    Ok(format!("W2(S,S) = 0, biased MMD(S,S) = 0, null C2ST {c:.4}, W2 shift {w:.4}"))
}

// ---------------------------------------------------------------- A7

fn a7() -> Outcome {
    let mut worst: f64 = 0.0;
    for (gi, id) in ["glm-1", "glm-2"].iter().enumerate() {
        let mut cfg = ok(ScenarioConfig::by_id(id))?;
        cfg.noise_prior = Some(NoisePrior::Known { variance: 0.5 });
        for case in 0..5u64 {
            let (data, _) = ok(sample_dataset(&cfg, &mut stream(SEED, 1200 + 10 * gi as u64 + case)))?;
            let post = ok(analytic_posterior(&cfg, &data))?;
            let target = ok(ctxflow::probmodels::ScenarioTarget::new(&cfg, &data))?;
            let la = ok(laplace_approximation(&target, &vec![0.0; target.dim()], &MapConfig::default()))?;
            let d = target.dim();
            for i in 0..d {
                worst = worst.max((la.posterior.mean[i] - post.mean[i]).abs());
                for j in 0..d {
                    worst = worst.max((la.posterior.cov[(i, j)] - post.cov[(i, j)]).abs());
                }
            }
        }
    }
    if worst > 1e-6 {
        return fail(format!("max abs deviation {worst:.2e} > 1e-6"));
    }
    Ok(format!("max abs deviation of mean and covariance {worst:.2e} on glm-1, glm-2 with known noise"))
}

// ---------------------------------------------------------------- A8

/// Exact Gaussian target given by its mean and precision matrix.
struct Gaussian {
    mean: Vec<f64>,
    prec: Vec<Vec<f64>>,
}

impl LogDensity for Gaussian {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> Result<f64> {
        let r: Vec<f64> = x.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        let mut q = 0.0;
        for i in 0..r.len() {
            grad[i] = -(0..r.len()).map(|j| self.prec[i][j] * r[j]).sum::<f64>();
            q -= r[i] * grad[i];
        }
        Ok(-0.5 * q)
    }
}

fn invert3(m: [[f64; 3]; 3]) -> Vec<Vec<f64>> {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let c = |i: usize, j: usize| {
        let (r0, r1) = ((i + 1) % 3, (i + 2) % 3);
        let (c0, c1) = ((j + 1) % 3, (j + 2) % 3);
        m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0]
    };
    (0..3).map(|i| (0..3).map(|j| c(j, i) / det).collect()).collect()
}

fn a8() -> Outcome {
    let cov = [[1.0, 0.6, -0.3], [0.6, 2.0, 0.5], [-0.3, 0.5, 0.8]];
    let target = Gaussian { mean: vec![1.0, -2.0, 0.5], prec: invert3(cov) };
    let cfg = AdviConfig { family: AdviFamily::FullRank, steps: 2000, lr: 1e-2, ..AdviConfig::default() };
    let r = ok(advi(&target, None, &cfg, &mut stream(SEED, 1300)))?;
    let mean_err = r.mean.iter().zip(&target.mean).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let fit = r.cov();
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..3 {
        for j in 0..3 {
            num += (fit[(i, j)] - cov[i][j]).powi(2);
            den += cov[i][j] * cov[i][j];
        }
    }
    let frob = (num / den).sqrt();
    if mean_err > 0.05 || frob > 0.15 {
        return fail(format!("full-rank mean error {mean_err:.4}, covariance Frobenius relative error {frob:.4}"));
    }

    let rho: f64 = 0.9;
    let det = 1.0 - rho * rho;
    let corr = Gaussian { mean: vec![0.0, 0.0], prec: vec![vec![1.0 / det, -rho / det], vec![-rho / det, 1.0 / det]] };
    let diag = AdviConfig { family: AdviFamily::Diagonal, ..cfg };
    let r = ok(advi(&corr, None, &diag, &mut stream(SEED, 1301)))?;
    let fitted: Vec<f64> = (0..2).map(|i| r.cov()[(i, i)]).collect();
    // KL(q || p) optimum for a factorized Gaussian: variance 1 / Lambda_ii.
    let optimum = det;
    for v in &fitted {
        if !(*v < 1.0) || (v / optimum - 1.0).abs() > 0.3 {
            return fail(format!("diagonal fit variances {fitted:?}, true 1, 1/Lambda_ii {optimum:.3}"));
        }
    }
    Ok(format!(
        "full-rank mean error {mean_err:.4}, Frobenius rel {frob:.4}; diagonal variances {:.3}, {:.3} < 1 (1/Lambda_ii {optimum:.3})",
        fitted[0], fitted[1]
    ))
}

// ---------------------------------------------------------------- A9

fn sign_fractions(x: &[f64]) -> (f64, f64) {
    let pos = x.iter().filter(|v| **v > 0.0).count() as f64 / x.len() as f64;
    (pos, 1.0 - pos)
}

fn a9() -> Outcome {
    let scenario = ok(ScenarioConfig::by_id("gmm-bimodal"))?;
    let mut rng = stream(SEED, 1400);
    let mut xs: Vec<f64> = (0..scenario.k).map(|i| if i % 2 == 0 { -2.5 } else { 2.5 } + 0.5 * std_normal(&mut rng)).collect();
    xs.shuffle(&mut rng);
    let data = ContextDataset::new(Matrix::from_vec(scenario.k, 1, xs), Family::GMM);

    let rc = ReferenceConfig { n_draws: N_DRAWS, seed: SEED, ..ReferenceConfig::default() };
    let hmc = ok(reference_samples(Method::Hmc, &scenario, &data, &rc))?;
    let chains = hmc.meta.diagnostics["acceptance"].as_array().map_or(0, |a| a.len());
    let (hp, hn) = sign_fractions(&hmc.draws.column(0));
    let advi_set = ok(reference_samples(Method::AdviFull, &scenario, &data, &rc))?;
    let (ap, an) = sign_fractions(&advi_set.draws.column(0));

    let trainer = TrainerConfig { total_samples: TRAIN_SAMPLES, seed: SEED + 9, ..TrainerConfig::default() };
    let (model, _) = train_desk(&scenario, &trainer, Objective::OtFm)?;
    let icl = icl_draws(&model, Objective::OtFm, &data, SEED + 1401)?;
    let (ip, in_) = sign_fractions(&icl.column(0));

    let detail = format!(
        "mu_1 sign split: HMC ({chains} chains) {hp:.3}/{hn:.3}, ADVI full-rank {ap:.3}/{an:.3}, ICL {ip:.3}/{in_:.3}"
    );
    if chains == 6 && hp.min(hn) >= 0.2 && ap.max(an) >= 0.95 && ip.min(in_) >= 0.1 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- A11

fn a11() -> Outcome {
    let mut rng = stream(SEED, 1500);
    for y in [-3.0, -0.5, 0.0, 0.7, 4.0] {
        if yeo_johnson_value(y, 1.0) != y {
            return fail(format!("lambda = 1 does not fix {y}"));
        }
    }
    let v = yeo_johnson_value(std::f64::consts::E - 1.0, 0.0);
    if v != 1.0 {
        return fail(format!("YJ(e - 1, 0) = {v:?}"));
    }
    let v = yeo_johnson_value(-1.0, 2.0);
    if v != -(2.0f64.ln()) {
        return fail(format!("YJ(-1, 2) = {v:?}"));
    }

    for trial in 0..20 {
        let lambda = rng.random_range(-5.0..5.0);
        let mut y: Vec<f64> = (0..10_000).map(|_| 3.0 * std_normal(&mut rng)).collect();
        y.sort_by(f64::total_cmp);
        let t = yeo_johnson_with(&y, lambda);
        if let Some(i) = (1..t.len()).find(|&i| y[i] > y[i - 1] && t[i] <= t[i - 1]) {
            return fail(format!("trial {trial}: lambda {lambda:.3} breaks order at {} < {}", y[i - 1], y[i]));
        }
    }

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("table.csv");
    let (n, cols) = (300, 6);
    let names: Vec<String> = (0..cols).map(|c| if c == cols - 1 { "y".into() } else { format!("x{c}") }).collect();
    let mut vals = Vec::with_capacity(n * cols);
    for r in 0..n {
        let x: Vec<f64> = (0..cols - 1).map(|c| if c == 2 { (r % 3) as f64 } else { std_normal(&mut rng) }).collect();
        let y = (x[0] + 0.5 * x[1] + 0.3 * std_normal(&mut rng)).exp();
        vals.extend(x);
        vals.push(y);
    }
    ok(write_csv(&path, &names, &Matrix::from_vec(n, cols, vals)))?;
    let scenario = ok(ScenarioConfig::by_id("glm-1"))?;
    let cfg = PrepConfig { target: "y".into(), p: 3, n_rows: Some(100), transform_target: true, prior_draws: 20_000, seed: 5 };
    let (first, record) = ok(preprocess(&ok(load_csv(&path))?, &cfg, &scenario))?;
    let stored = serde_json::to_string(&record).map_err(|e| e.to_string())?;
    let record: PreprocessRecord = serde_json::from_str(&stored).map_err(|e| e.to_string())?;
    let replay = ok(apply_record(&ok(load_csv(&path))?, &record))?;
    let same = first.rows.shape() == replay.rows.shape()
        && first.rows.data().iter().zip(replay.rows.data()).all(|(a, b)| a.to_bits() == b.to_bits());
    if !same {
        return fail("replayed pipeline differs from the original");
    }
    Ok(format!(
        "three branch values exact; order kept on 20 x 1e4 inputs; replay of {}x{} bitwise (lambda {:.4})",
        first.rows.rows(),
        first.rows.cols(),
        record.yj_lambda.unwrap_or(f64::NAN)
    ))
}
