//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numerical failure. Every failure also prints one JSON diagnostic line on
//! standard error. Log verbosity comes from the `LSR_LOG` environment
//! variable (`error`, `warn`, `info`, `debug`, `trace`).

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::bench::{
    classifier_setup, results_csv, run_estimator, EstimatorContext, EstimatorKind, ExperimentGrid,
};
use crate::classifier::{predict_labels, train_calibrated_classifier_with, DEFAULT_L2};
use crate::dataset::{LabeledDataset, UnlabeledDataset};
use crate::error::{Error, ErrorKind, Result};
use crate::estimator::{EstimationResult, OptimizerConfig};
use crate::io::{
    labeled_csv_string, load_csv_labeled_many, load_csv_unlabeled, unlabeled_csv_string,
    write_atomic,
};
use crate::kernel::{fit_mmd_terms, KernelSpec};
use crate::rng::{stream_rng, StreamRole};
use crate::synth::{
    contaminate, generate_sources, ContaminationPlan, ContaminationScheme, MixtureSpec,
};
use crate::weighting::{WeightRule, WeightingConfig};

/// Version of the JSON documents written by `estimate`, `classify` and
/// `simulate`.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(
    name = "lsr",
    version,
    about = "Robust class-proportion estimation under label shift"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic sources and a target sample as CSV files.
    Simulate(SimulateArgs),
    /// Estimate target class proportions from source and target CSVs.
    Estimate(EstimateArgs),
    /// Estimate proportions, then train and apply the calibrated classifier.
    Classify(EstimateArgs),
    /// Run a benchmark grid and write the results CSV.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// JSON configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed for every random draw.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output file or directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Override a configuration key, e.g. `optimizer.max_iters=200`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RuleArg {
    Mwv,
    Trunc,
    Trim,
    Mom,
}

impl From<RuleArg> for WeightRule {
    fn from(r: RuleArg) -> Self {
        match r {
            RuleArg::Mwv => WeightRule::Mwv,
            RuleArg::Trunc => WeightRule::Truncated,
            RuleArg::Trim => WeightRule::Trimmed,
            RuleArg::Mom => WeightRule::MedianOfMeans,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    /// Contamination budget; required by trim, rod, roe and roe-multi.
    #[arg(long = "eps-h")]
    pub eps_h: Option<f64>,
    #[arg(long, value_enum)]
    pub rule: Option<RuleArg>,
    #[arg(long, value_enum)]
    pub estimator: Vec<EstimatorKind>,
    #[arg(long = "refine-steps")]
    pub refine_steps: Option<usize>,
    #[arg(long = "max-iters")]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Labeled source CSVs; repeat the flag or list several paths.
    #[arg(long = "source", required = true, num_args = 1..)]
    pub sources: Vec<PathBuf>,
    /// Unlabeled target CSV.
    #[arg(long)]
    pub target: PathBuf,
    /// Kernel bandwidth, or `median` for the median heuristic.
    #[arg(long)]
    pub bandwidth: Option<String>,
    /// Number of classes; defaults to the largest label seen.
    #[arg(long)]
    pub classes: Option<usize>,
    /// 1-based inlier sources for the oracle estimator.
    #[arg(long, value_delimiter = ',')]
    pub inliers: Vec<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthRule {
    Median,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BandwidthSetting {
    Fixed(f64),
    Rule(BandwidthRule),
}

impl BandwidthSetting {
    fn parse(s: &str) -> Result<Self> {
        if s == "median" {
            return Ok(BandwidthSetting::Rule(BandwidthRule::Median));
        }
        s.parse()
            .map(BandwidthSetting::Fixed)
            .map_err(|_| Error::arg(format!("bandwidth must be a number or `median`, got {s:?}")))
    }
}

/// Configuration for `estimate` and `classify`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateConfig {
    pub estimator: EstimatorKind,
    pub rule: WeightRule,
    pub eps_h: Option<f64>,
    pub mom_groups: usize,
    pub bandwidth: BandwidthSetting,
    pub classes: Option<usize>,
    /// 1-based.
    pub inliers: Vec<usize>,
    pub l2: f64,
    pub optimizer: OptimizerConfig,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        Self {
            estimator: EstimatorKind::Roe,
            rule: WeightRule::Mwv,
            eps_h: None,
            mom_groups: 1,
            bandwidth: BandwidthSetting::Fixed(1.0),
            classes: None,
            inliers: Vec::new(),
            l2: DEFAULT_L2,
            optimizer: OptimizerConfig::default(),
        }
    }
}

/// Configuration for `simulate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub m: usize,
    pub n: usize,
    /// Target sample size; `m n` when absent.
    #[serde(rename = "N")]
    pub big_n: Option<usize>,
    pub eps: f64,
    pub mixture: MixtureSpec,
    pub contamination: ContaminationScheme,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            m: 40,
            n: 100,
            big_n: None,
            eps: 0.2,
            mixture: MixtureSpec::default(),
            contamination: ContaminationScheme::default(),
        }
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or("LSR_LOG", "warn"))
        .format_timestamp(None)
        .try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind as ClapKind;
            if matches!(e.kind(), ClapKind::DisplayHelp | ClapKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            let message = e.render().to_string();
            let first = message
                .lines()
                .next()
                .unwrap_or_default()
                .trim_start_matches("error: ");
            emit_diagnostic("usage", ErrorKind::Usage, first);
            return 1;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            emit_diagnostic(e.code(), e.kind(), &e.to_string());
            exit_code(e.kind())
        }
    }
}

pub fn exit_code(kind: ErrorKind) -> i32 {
    match kind {
        ErrorKind::Usage => 1,
        ErrorKind::Data => 2,
        ErrorKind::Numerical => 3,
    }
}

fn emit_diagnostic(code: &str, kind: ErrorKind, message: &str) {
    let kind_name = match kind {
        ErrorKind::Usage => "usage",
        ErrorKind::Data => "data",
        ErrorKind::Numerical => "numerical",
    };
    let line = json!({
        "level": "error",
        "code": code,
        "kind": kind_name,
        "exit_code": exit_code(kind),
        "message": message,
    });
    eprintln!("{line}");
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => with_workers(a.common.workers, || simulate(&a)),
        Command::Estimate(a) => with_workers(a.common.workers, || estimate(&a, false)),
        Command::Classify(a) => with_workers(a.common.workers, || estimate(&a, true)),
        Command::Bench(a) => bench(&a),
    }
}

fn with_workers<T: Send>(
    workers: Option<usize>,
    f: impl FnOnce() -> Result<T> + Send,
) -> Result<T> {
    match workers {
        None => f(),
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?
            .install(f),
    }
}

/// Reads the JSON config (or the defaults), then applies `key=value`
/// overrides. Dotted keys reach into nested objects; values parse as JSON
/// and fall back to plain strings. Unknown keys are rejected on decoding.
fn load_config<T: Serialize + DeserializeOwned>(
    path: Option<&Path>,
    default: Option<T>,
    overrides: &[String],
) -> Result<T> {
    let mut doc: Value = match (path, default) {
        (Some(p), _) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        (None, Some(d)) => serde_json::to_value(d).map_err(|e| Error::Config(e.to_string()))?,
        (None, None) => return Err(Error::Config("--config is required".into())),
    };
    for item in overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {item:?} is not KEY=VALUE")))?;
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut slot = &mut doc;
        let parts: Vec<&str> = key.split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            let obj = slot.as_object_mut().ok_or_else(|| {
                Error::Config(format!(
                    "override key {key:?} does not name an object field"
                ))
            })?;
            if i + 1 == parts.len() {
                obj.insert(part.to_string(), value.clone());
                break;
            }
            slot = obj.entry(part.to_string()).or_insert_with(|| json!({}));
        }
    }
    serde_json::from_value(doc).map_err(|e| Error::Config(e.to_string()))
}

fn apply_solver_flags(cfg: &mut OptimizerConfig, s: &SolverArgs) {
    if let Some(v) = s.refine_steps {
        cfg.refine_steps = v;
    }
    if let Some(v) = s.max_iters {
        cfg.max_iters = v;
    }
    if let Some(v) = s.tol {
        cfg.tol = v;
    }
}

fn write_or_print(out: Option<&Path>, contents: &[u8]) -> Result<()> {
    match out {
        Some(p) => write_atomic(p, contents),
        None => {
            use std::io::Write;
            std::io::stdout().write_all(contents)?;
            Ok(())
        }
    }
}

fn simulate(a: &SimulateArgs) -> Result<()> {
    let cfg: SimulateConfig = load_config(
        a.common.config.as_deref(),
        Some(SimulateConfig::default()),
        &a.common.overrides,
    )?;
    let out = a
        .common
        .out
        .as_deref()
        .ok_or_else(|| Error::arg("simulate needs --out DIR"))?;
    let seed = a.common.seed.unwrap_or(0);
    let big_n = cfg.big_n.unwrap_or(cfg.m * cfg.n);
    let plan = ContaminationPlan::new(cfg.eps, cfg.contamination.clone())?;
    let data = generate_sources(
        &cfg.mixture,
        cfg.m,
        cfg.n,
        big_n,
        &mut stream_rng(seed, 0, 0, StreamRole::Generate),
    )?;
    let coll = contaminate(
        &data.sources,
        &plan,
        &mut stream_rng(seed, 0, 0, StreamRole::Contaminate),
    )?;

    let mut files: Vec<(PathBuf, Vec<u8>)> = Vec::new();
    let width = cfg.m.to_string().len();
    let mut names = Vec::new();
    for (j, s) in coll.sources.iter().enumerate() {
        let name = format!("source_{:0width$}.csv", j + 1);
        files.push((out.join(&name), labeled_csv_string(s).into_bytes()));
        names.push(name);
    }
    files.push((
        out.join("target.csv"),
        unlabeled_csv_string(&data.target).into_bytes(),
    ));
    let mut labels = String::from("y\n");
    for y in &data.target_labels {
        labels.push_str(&format!("{}\n", y + 1));
    }
    files.push((out.join("target_labels.csv"), labels.into_bytes()));
    let manifest = json!({
        "schema_version": SCHEMA_VERSION,
        "seed": seed,
        "m": cfg.m,
        "n": cfg.n,
        "N": big_n,
        "eps": cfg.eps,
        "sources": names,
        "outliers": coll.outliers.iter().map(|j| j + 1).collect::<Vec<_>>(),
        "target_proportions": cfg.mixture.target_proportions.as_slice(),
    });
    files.push((out.join("manifest.json"), pretty(&manifest)?));

    std::fs::create_dir_all(out)?;
    for (path, bytes) in files {
        write_atomic(&path, &bytes)?;
    }
    log::info!("wrote {} sources to {}", cfg.m, out.display());
    Ok(())
}

fn pretty(v: &Value) -> Result<Vec<u8>> {
    let mut bytes =
        serde_json::to_vec_pretty(v).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    bytes.push(b'\n');
    Ok(bytes)
}

struct Loaded {
    sources: Vec<LabeledDataset>,
    target: UnlabeledDataset,
}

fn load_data(a: &EstimateArgs, classes: Option<usize>) -> Result<Loaded> {
    let sources = load_csv_labeled_many(&a.sources, classes)?;
    let target = load_csv_unlabeled(&a.target)?;
    if target.dim() != sources[0].dim() {
        return Err(Error::Schema {
            path: a.target.clone(),
            line: 1,
            message: format!(
                "target has {} covariate columns, sources have {}",
                target.dim(),
                sources[0].dim()
            ),
        });
    }
    Ok(Loaded { sources, target })
}

fn estimate(a: &EstimateArgs, classify: bool) -> Result<()> {
    let mut cfg: EstimateConfig = load_config(
        a.common.config.as_deref(),
        Some(EstimateConfig::default()),
        &a.common.overrides,
    )?;
    match a.solver.estimator.as_slice() {
        [] => {}
        [one] => cfg.estimator = *one,
        _ => return Err(Error::arg("estimate takes a single --estimator")),
    }
    if let Some(r) = a.solver.rule {
        cfg.rule = r.into();
    }
    if a.solver.eps_h.is_some() {
        cfg.eps_h = a.solver.eps_h;
    }
    if let Some(b) = &a.bandwidth {
        cfg.bandwidth = BandwidthSetting::parse(b)?;
    }
    if a.classes.is_some() {
        cfg.classes = a.classes;
    }
    if !a.inliers.is_empty() {
        cfg.inliers = a.inliers.clone();
    }
    apply_solver_flags(&mut cfg.optimizer, &a.solver);
    let seed = a.common.seed.unwrap_or(0);
    cfg.optimizer.seed = seed;
    cfg.optimizer.validate()?;

    let eps_h = match (cfg.eps_h, cfg.estimator.uses_budget()) {
        (Some(e), _) => e,
        (None, false) => 0.0,
        (None, true) => {
            return Err(Error::arg(format!(
                "--eps-h is required for the {} estimator",
                cfg.estimator.name()
            )))
        }
    };
    let robust = WeightingConfig {
        rule: cfg.rule,
        eps_h,
        mom_groups: cfg.mom_groups,
    };
    robust.validate()?;
    if cfg.inliers.contains(&0) {
        return Err(Error::arg("inlier indices are 1-based"));
    }

    let data = load_data(a, cfg.classes)?;
    let m = data.sources.len();
    let spec = match cfg.bandwidth {
        BandwidthSetting::Fixed(s) => KernelSpec::gaussian(s)?,
        BandwidthSetting::Rule(BandwidthRule::Median) => KernelSpec::median_heuristic(
            data.sources
                .iter()
                .map(|s| (s.covariates(), s.dim()))
                .chain(std::iter::once((
                    data.target.covariates(),
                    data.target.dim(),
                ))),
        )?,
    };
    let quads = data
        .sources
        .iter()
        .map(|s| fit_mmd_terms(s, &data.target, &spec))
        .collect::<Result<Vec<_>>>()?;
    let single = stream_rng(seed, 0, 0, StreamRole::SingleChoice).random_range(0..m);
    let inliers: Vec<usize> = cfg.inliers.iter().map(|j| j - 1).collect();
    let ctx = EstimatorContext {
        quads: &quads,
        optimizer: &cfg.optimizer,
        robust: &robust,
        eps_h,
        single,
        inliers: &inliers,
    };
    let result = run_estimator(cfg.estimator, &ctx, None)?;
    let report = estimate_report(&cfg, &result, eps_h, spec.bandwidth(), m);

    if !classify {
        return write_or_print(a.common.out.as_deref(), &pretty(&report)?);
    }

    let out = a
        .common
        .out
        .as_deref()
        .ok_or_else(|| Error::arg("classify needs --out DIR"))?;
    let (subset, wcfg) = classifier_setup(cfg.estimator, &ctx)?;
    let chosen: Vec<LabeledDataset> = subset.iter().map(|&j| data.sources[j].clone()).collect();
    let params = train_calibrated_classifier_with(
        &chosen,
        &result.q_hat,
        &cfg.optimizer,
        &wcfg,
        None,
        cfg.l2,
    )?;
    let predicted = predict_labels(&params, data.target.covariates(), data.target.dim())?;
    let mut predictions = String::from("y\n");
    for y in predicted {
        predictions.push_str(&format!("{}\n", y + 1));
    }
    let estimate_bytes = pretty(&report)?;
    std::fs::create_dir_all(out)?;
    write_atomic(&out.join("estimate.json"), &estimate_bytes)?;
    write_atomic(&out.join("predictions.csv"), predictions.as_bytes())?;
    write_atomic(&out.join("model.txt"), params.to_text().as_bytes())?;
    Ok(())
}

fn estimate_report(
    cfg: &EstimateConfig,
    r: &EstimationResult,
    eps_h: f64,
    bandwidth: f64,
    m: usize,
) -> Value {
    let mut v = json!({
        "schema_version": SCHEMA_VERSION,
        "estimator": cfg.estimator.name(),
        "rule": cfg.rule.name(),
        "eps_h": eps_h,
        "bandwidth": bandwidth,
        "num_sources": m,
        "num_classes": r.q_hat.len(),
        "q_hat": r.q_hat.as_slice(),
        "weights": r.weights.weights(),
        "selected_sources": r.weights.selected().iter().map(|j| j + 1).collect::<Vec<_>>(),
        "iterations_used": r.iterations_used,
        "objective": r.objective,
    });
    if let Some(trace) = &r.trace {
        v["trace"] = json!(trace);
    }
    v
}

fn bench(a: &BenchArgs) -> Result<()> {
    let seed = a
        .common
        .seed
        .ok_or_else(|| Error::arg("bench requires --seed"))?;
    let mut grid: ExperimentGrid = load_config(
        a.common.config.as_deref(),
        None::<ExperimentGrid>,
        &a.common.overrides,
    )?;
    grid.base_seed = Some(seed);
    if let Some(e) = a.solver.eps_h {
        grid.eps_h = vec![e];
    }
    if let Some(r) = a.solver.rule {
        grid.rule = r.into();
    }
    if !a.solver.estimator.is_empty() {
        grid.estimators = a.solver.estimator.clone();
    }
    apply_solver_flags(&mut grid.optimizer, &a.solver);
    grid.validate()?;
    let workers = a
        .common
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let rows = crate::bench::run_experiment_grid(&grid, workers)?;
    let failed = rows.iter().filter(|r| r.status != "ok").count();
    if failed > 0 {
        log::warn!(
            "{failed} of {} result rows carry an error status",
            rows.len()
        );
    }
    write_or_print(a.common.out.as_deref(), &results_csv(&rows)?)
}
