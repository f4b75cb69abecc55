//! The individual subcommands.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, ValueEnum};
use ctxflow::flow::{train, FlowConfig, Objective, TrainOptions, TrainerConfig};
use ctxflow::infer::{reference_samples, Method, ReferenceConfig};
use ctxflow::metrics::{c2st, mmd, wasserstein2, C2stConfig, MetricReport, MmdConfig, ReportRow};
use ctxflow::nn::{load_checkpoint, read_header, HeadKind, Model, ModelConfig};
use ctxflow::ode::sample_posterior;
use ctxflow::rng::stream;
use ctxflow::{Matrix, Real, SampleSet, ScenarioConfig, SolverConfig};
use serde::{Deserialize, Serialize};

use crate::data::{generate, load_dataset, resolve_scenario};
use crate::failure::{CliResult, Failure};
use crate::manifest::{manifest_path, ManifestBuilder, RunManifest};

fn read_json(path: &Path) -> CliResult<serde_json::Value> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::config(format!("cannot create {}: {e}", dir.display())))
}

fn create_parent(file: &Path) -> CliResult<()> {
    match file.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct GenDataArgs {
    /// Scenario id (glm-1 .. gmm-4, glm-1-mini, gmm-bimodal) or a JSON file.
    #[arg(long)]
    pub scenario: String,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn gen_data(a: &GenDataArgs) -> CliResult<RunManifest> {
    let (id, cfg) = resolve_scenario(&a.scenario)?;
    create_dir(&a.out)?;
    let loc = manifest_path(&a.out, true);
    let mut m = ManifestBuilder::new("gen-data", serde_json::to_value(a)?, vec![a.seed], &loc);
    let file = generate(&id, &cfg, a.n, a.seed)?;
    m.phase("generate");
    let data = a.out.join("datasets.bin");
    file.write(&data)?;
    let scen = a.out.join("scenario.json");
    std::fs::write(&scen, serde_json::to_string_pretty(&cfg)?)?;
    m.output(&data)?;
    m.output(&scen)?;
    m.phase("write");
    m.finish(&loc)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub scenario: String,
    /// JSON object overriding fields of the default desk-scale model.
    #[arg(long)]
    pub model_cfg: Option<PathBuf>,
    /// JSON object overriding fields of the default trainer configuration.
    #[arg(long)]
    pub trainer_cfg: Option<PathBuf>,
    #[arg(long, value_parser = Objective::from_str)]
    #[serde(skip)]
    pub objective: Objective,
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Stop after this many optimizer steps in this invocation.
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long, value_enum, default_value_t = Precision::F32)]
    pub precision: Precision,
    /// Overrides the trainer seed (which also seeds initialization).
    #[arg(long)]
    pub seed: Option<u64>,
}

fn merge(base: &mut serde_json::Value, over: serde_json::Value) -> Result<(), String> {
    match (base.as_object_mut(), over) {
        (Some(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                b.insert(k, v);
            }
            Ok(())
        }
        (_, other) => Err(format!("expected a JSON object, got {other}")),
    }
}

/// Every configuration problem at once, or the resolved configurations.
pub fn resolve_training(
    a: &TrainArgs,
) -> CliResult<(String, ScenarioConfig, ModelConfig, TrainerConfig, FlowConfig)> {
    let (id, scenario) = resolve_scenario(&a.scenario)?;
    let mut problems = Vec::new();
    let mut model_v = serde_json::to_value(ModelConfig::desk(scenario.latent_dim(), scenario.row_width()))?;
    let head = if a.objective == Objective::Gaussian { HeadKind::Gaussian } else { HeadKind::VectorField };
    model_v["head"] = serde_json::to_value(head)?;
    if let Some(p) = &a.model_cfg {
        if let Err(e) = merge(&mut model_v, read_json(p)?) {
            problems.push(format!("model config: {e}"));
        }
    }
    let model = serde_json::from_value::<ModelConfig>(model_v).map_err(|e| problems.push(format!("model config: {e}"))).ok();
    let mut trainer_v = serde_json::to_value(TrainerConfig::default())?;
    if let Some(p) = &a.trainer_cfg {
        if let Err(e) = merge(&mut trainer_v, read_json(p)?) {
            problems.push(format!("trainer config: {e}"));
        }
    }
    let mut trainer =
        serde_json::from_value::<TrainerConfig>(trainer_v).map_err(|e| problems.push(format!("trainer config: {e}"))).ok();
    if let (Some(t), Some(s)) = (trainer.as_mut(), a.seed) {
        t.seed = s;
    }
    if let Some(m) = &model {
        if let Err(e) = m.validate() {
            problems.push(e.to_string());
        }
        if m.latent_dim != scenario.latent_dim() || m.input_dim != scenario.row_width() {
            problems.push(format!(
                "model dims (latent {}, input {}) do not fit scenario {id} (latent {}, input {})",
                m.latent_dim,
                m.input_dim,
                scenario.latent_dim(),
                scenario.row_width()
            ));
        }
        if m.head != head {
            problems.push(format!("objective {:?} needs a {head:?} head", a.objective));
        }
    }
    if let Some(t) = &trainer {
        if let Err(e) = t.validate() {
            problems.push(e.to_string());
        }
    }
    let flow = FlowConfig::with_objective(a.objective);
    if let Err(e) = flow.validate() {
        problems.push(e.to_string());
    }
    match (model, trainer, problems.is_empty()) {
        (Some(m), Some(t), true) => Ok((id, scenario, m, t, flow)),
        _ => Err(Failure::config(problems.join("\n"))),
    }
}

fn train_as<T: Real>(
    a: &TrainArgs,
    scenario: &ScenarioConfig,
    model_cfg: ModelConfig,
    trainer: &TrainerConfig,
    flow: &FlowConfig,
) -> CliResult<()> {
    let model = Model::<T>::new(model_cfg, trainer.seed)?;
    let resume = a.resume.as_deref().map(load_checkpoint::<T>).transpose()?;
    let opts = TrainOptions { out_dir: Some(a.out.clone()), resume, max_steps: a.max_steps, on_step: None };
    train(trainer, flow, model, scenario, opts)?;
    Ok(())
}

pub fn train_cmd(a: &TrainArgs) -> CliResult<RunManifest> {
    let (_, scenario, model_cfg, trainer, flow) = resolve_training(a)?;
    create_dir(&a.out)?;
    let loc = manifest_path(&a.out, true);
    let mut args = serde_json::to_value(a)?;
    args["objective"] = serde_json::to_value(a.objective)?;
    args["resolved"] = serde_json::json!({ "model": model_cfg, "trainer": trainer, "flow": flow, "scenario": scenario });
    let mut m = ManifestBuilder::new("train", args, vec![trainer.seed], &loc);
    for p in [&a.model_cfg, &a.trainer_cfg, &a.resume].into_iter().flatten() {
        m.input(p)?;
    }
    match a.precision {
        Precision::F32 => train_as::<f32>(a, &scenario, model_cfg, &trainer, &flow)?,
        Precision::F64 => train_as::<f64>(a, &scenario, model_cfg, &trainer, &flow)?,
    }
    m.phase("train");
    m.output(&a.out.join("checkpoint.bin"))?;
    m.output(&a.out.join("train_log.csv"))?;
    m.finish(&loc)
}

/// A checkpoint as a 64-bit model plus the flow and scenario it was trained with.
pub fn load_model(path: &Path) -> CliResult<(Model<f64>, FlowConfig, Option<ScenarioConfig>)> {
    let header = read_header(path)?;
    let dtype = header.tensors.first().map_or("f64", |t| t.dtype.as_str());
    let ck = match dtype {
        "f32" => {
            let c = load_checkpoint::<f32>(path)?;
            (Model::from_params(c.config, c.params.cast()), c.meta)
        }
        _ => {
            let c = load_checkpoint::<f64>(path)?;
            (Model::from_params(c.config, c.params), c.meta)
        }
    };
    let (model, meta) = ck;
    let flow = match meta.get("flow") {
        Some(f) => serde_json::from_value(f.clone())?,
        None => {
            let obj = if model.cfg.head == HeadKind::Gaussian { Objective::Gaussian } else { Objective::OtFm };
            FlowConfig::with_objective(obj)
        }
    };
    let scenario = meta.get("scenario").map(|s| serde_json::from_value(s.clone())).transpose()?;
    Ok((model, flow, scenario))
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct SampleArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset container from gen-data, or a CSV of dataset rows.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 1e-7)]
    pub rtol: f64,
    #[arg(long, default_value_t = 1e-7)]
    pub atol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Posterior draws from a trained model for one dataset.
pub fn icl_samples(
    model: &Model<f64>,
    flow: &FlowConfig,
    scenario: Option<&ScenarioConfig>,
    data: &Matrix,
    n: usize,
    solver: &SolverConfig,
    seed: u64,
) -> CliResult<SampleSet> {
    if data.cols() != model.cfg.input_dim {
        return Err(Failure::config(format!(
            "checkpoint/model-config mismatch: model expects rows of width {}, dataset has {}",
            model.cfg.input_dim,
            data.cols()
        )));
    }
    let mut set = sample_posterior(model, flow, data, n, solver, &mut stream(seed, 0x5A))?;
    set.meta.seed = Some(seed);
    if let Some(s) = scenario.filter(|s| s.latent_dim() == set.dim()) {
        set.names = s.latent_layout().coordinate_names();
    }
    Ok(set)
}

pub fn sample_cmd(a: &SampleArgs) -> CliResult<RunManifest> {
    let (model, flow, scenario) = load_model(&a.checkpoint)?;
    let (data, _) = load_dataset(&a.data, a.index, scenario.as_ref())?;
    let solver = SolverConfig { rtol: a.rtol, atol: a.atol, ..SolverConfig::default() };
    solver.validate()?;
    create_parent(&a.out)?;
    let loc = manifest_path(&a.out, false);
    let mut m = ManifestBuilder::new("sample", serde_json::to_value(a)?, vec![a.seed], &loc);
    m.input(&a.checkpoint)?;
    m.input(&a.data)?;
    m.phase("load");
    let set = icl_samples(&model, &flow, scenario.as_ref(), &data.rows, a.n, &solver, a.seed)?;
    m.phase("sample");
    set.write(&a.out)?;
    m.output(&a.out)?;
    m.output(&ctxflow::samples::sidecar_path(&a.out))?;
    let failures = set.meta.failures.len();
    let manifest = m.finish(&loc)?;
    if failures > 0 {
        log::warn!("{failures} of {} trajectories failed", a.n);
    }
    Ok(manifest)
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct InferArgs {
    #[arg(long, value_parser = Method::from_str)]
    #[serde(skip)]
    pub method: Method,
    #[arg(long)]
    pub scenario: String,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    /// JSON object overriding the reference-method settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn reference_config(path: Option<&Path>, n: usize, seed: u64) -> CliResult<ReferenceConfig> {
    let mut v = serde_json::to_value(ReferenceConfig::default())?;
    if let Some(p) = path {
        merge(&mut v, read_json(p)?).map_err(Failure::config)?;
    }
    let mut rc: ReferenceConfig = serde_json::from_value(v).map_err(|e| Failure::config(format!("reference config: {e}")))?;
    rc.n_draws = n;
    rc.seed = seed;
    rc.hmc.validate()?;
    rc.advi.validate()?;
    Ok(rc)
}

pub fn infer_cmd(a: &InferArgs) -> CliResult<RunManifest> {
    let (_, scenario) = resolve_scenario(&a.scenario)?;
    let rc = reference_config(a.config.as_deref(), a.n, a.seed)?;
    let (data, _) = load_dataset(&a.data, a.index, Some(&scenario))?;
    create_parent(&a.out)?;
    let loc = manifest_path(&a.out, false);
    let mut args = serde_json::to_value(a)?;
    args["method"] = a.method.name().into();
    args["resolved"] = serde_json::to_value(&rc)?;
    let mut m = ManifestBuilder::new("infer", args, vec![a.seed], &loc);
    m.input(&a.data)?;
    if let Some(p) = &a.config {
        m.input(p)?;
    }
    let set = reference_samples(a.method, &scenario, &data, &rc)?;
    m.phase(a.method.name());
    set.write(&a.out)?;
    m.output(&a.out)?;
    m.output(&ctxflow::samples::sidecar_path(&a.out))?;
    m.finish(&loc)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Rf,
    Mlp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricName {
    C2st,
    Mmd,
    W2,
}

impl FromStr for MetricName {
    type Err = Failure;

    fn from_str(s: &str) -> CliResult<Self> {
        match s.trim() {
            "c2st" => Ok(Self::C2st),
            "mmd" => Ok(Self::Mmd),
            "w2" => Ok(Self::W2),
            other => Err(Failure::config(format!("unknown metric `{other}` (expected c2st, mmd or w2)"))),
        }
    }
}

pub fn parse_metrics(list: &str) -> CliResult<Vec<MetricName>> {
    list.split(',').filter(|s| !s.trim().is_empty()).map(str::parse).collect()
}

/// Compare two draw matrices. Each metric gets its own stream of `seed`.
pub fn compare(a: &Matrix, b: &Matrix, metrics: &[MetricName], backend: Backend, seed: u64) -> CliResult<Vec<MetricReport>> {
    metrics
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let mut rng = stream(seed, 0xE0 + i as u64);
            Ok(match m {
                MetricName::C2st => {
                    let cfg = match backend {
                        Backend::Rf => C2stConfig::default(),
                        Backend::Mlp => C2stConfig::mlp(),
                    };
                    c2st(a, b, &cfg, &mut rng)?
                }
                MetricName::Mmd => mmd(a, b, &MmdConfig::default())?,
                MetricName::W2 => wasserstein2(a, b, &mut rng)?,
            })
        })
        .collect()
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long, default_value = "c2st,mmd,w2")]
    pub metrics: String,
    #[arg(long, value_enum, default_value_t = Backend::Rf)]
    pub c2st_backend: Backend,
    /// Scenario label written to the report rows.
    #[arg(long, default_value = "")]
    pub scenario: String,
    /// Method label; defaults to the method recorded with `--a`.
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Report CSV; rows are appended when it exists.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn append_report(path: &Path, rows: &[ReportRow]) -> CliResult<()> {
    let mut all = if path.exists() && std::fs::metadata(path)?.len() > 0 {
        ctxflow::metrics::read_report(path)?
    } else {
        Vec::new()
    };
    all.extend_from_slice(rows);
    ctxflow::metrics::write_report(path, &all)?;
    Ok(())
}

pub fn evaluate_cmd(a: &EvaluateArgs) -> CliResult<(RunManifest, Vec<ReportRow>)> {
    let metrics = parse_metrics(&a.metrics)?;
    let sa = SampleSet::read(&a.a)?;
    let sb = SampleSet::read(&a.b)?;
    if sa.dim() != sb.dim() {
        return Err(Failure::config(format!("sample sets of dimension {} and {}", sa.dim(), sb.dim())));
    }
    create_parent(&a.out)?;
    let loc = manifest_path(&a.out, false);
    let mut m = ManifestBuilder::new("evaluate", serde_json::to_value(a)?, vec![a.seed], &loc);
    m.input(&a.a)?;
    m.input(&a.b)?;
    let reports = compare(&sa.draws, &sb.draws, &metrics, a.c2st_backend, a.seed)?;
    m.phase("metrics");
    let method = a.method.clone().unwrap_or_else(|| sa.meta.method.clone());
    let rows: Vec<ReportRow> = reports.iter().map(|r| ReportRow::new(&a.scenario, &method, r)).collect();
    append_report(&a.out, &rows)?;
    m.output(&a.out)?;
    Ok((m.finish(&loc)?, rows))
}

