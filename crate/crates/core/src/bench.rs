//! Monte-Carlo experiment runner.
//!
//! Each (grid point, replication) pair is an independent task. Its random
//! draws come from [`stream_rng`] keyed by `(base_seed, grid_id,
//! replication, role)`, so the results table is a pure function of the grid
//! and does not depend on the worker count.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{predict_labels, train_calibrated_classifier};
use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::estimator::{
    baseline_estimate, rod_estimate, roe_estimate, roe_multistep, Baseline, EstimationResult,
    OptimizerConfig,
};
use crate::kernel::{fit_mmd_terms, KernelSpec, MmdQuadratic};
use crate::metrics::{fsn_metric, misclassification_error, mse_metric};
use crate::rng::{stream_rng, StreamRole};
use crate::synth::{
    contaminate, generate_sources, ContaminationPlan, ContaminationScheme, MixtureSpec,
};
use crate::weighting::{WeightRule, WeightingConfig};

pub const RESULTS_HEADER: &str =
    "grid_id,m,n,N,eps,eps_h,replication,estimator,metric,value,status";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    Single,
    Average,
    Trim,
    Rod,
    Roe,
    RoeMulti,
    Oracle,
}

impl EstimatorKind {
    /// Whether the estimator consumes the contamination budget `eps_h`.
    pub fn uses_budget(&self) -> bool {
        !matches!(
            self,
            EstimatorKind::Single | EstimatorKind::Average | EstimatorKind::Oracle
        )
    }

    pub fn name(&self) -> &'static str {
        match self {
            EstimatorKind::Single => "single",
            EstimatorKind::Average => "average",
            EstimatorKind::Trim => "trim",
            EstimatorKind::Rod => "rod",
            EstimatorKind::Roe => "roe",
            EstimatorKind::RoeMulti => "roe-multi",
            EstimatorKind::Oracle => "oracle",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::Config(format!("unknown estimator {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Mse,
    Fsn,
    Misclassification,
}

impl MetricKind {
    pub fn name(&self) -> &'static str {
        match self {
            MetricKind::Mse => "mse",
            MetricKind::Fsn => "fsn",
            MetricKind::Misclassification => "misclassification",
        }
    }
}

fn default_replications() -> usize {
    100
}

fn default_metrics() -> Vec<MetricKind> {
    vec![MetricKind::Mse]
}

fn default_rule() -> WeightRule {
    WeightRule::Mwv
}

fn default_mom_groups() -> usize {
    3
}

fn default_bandwidth() -> f64 {
    1.0
}

/// Benchmark configuration. Grid points are the Cartesian product of the
/// axes in the order `m, n, N, eps, eps_h` (last varies fastest). An empty
/// `N` axis means `N = m n`; an empty `eps_h` axis means `eps_h = eps`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentGrid {
    pub m: Vec<usize>,
    pub n: Vec<usize>,
    #[serde(default, rename = "N")]
    pub big_n: Vec<usize>,
    pub eps: Vec<f64>,
    #[serde(default)]
    pub eps_h: Vec<f64>,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default)]
    pub base_seed: Option<u64>,
    pub estimators: Vec<EstimatorKind>,
    #[serde(default = "default_metrics")]
    pub metrics: Vec<MetricKind>,
    #[serde(default = "default_rule")]
    pub rule: WeightRule,
    #[serde(default = "default_mom_groups")]
    pub mom_groups: usize,
    #[serde(default = "default_bandwidth")]
    pub bandwidth: f64,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub mixture: MixtureSpec,
    #[serde(default)]
    pub contamination: ContaminationScheme,
}

impl ExperimentGrid {
    /// A grid with the synthetic defaults and a single point.
    pub fn single_point(
        m: usize,
        n: usize,
        eps: f64,
        eps_h: f64,
        estimators: Vec<EstimatorKind>,
    ) -> Self {
        Self {
            m: vec![m],
            n: vec![n],
            big_n: Vec::new(),
            eps: vec![eps],
            eps_h: vec![eps_h],
            replications: default_replications(),
            base_seed: None,
            estimators,
            metrics: default_metrics(),
            rule: default_rule(),
            mom_groups: default_mom_groups(),
            bandwidth: default_bandwidth(),
            optimizer: OptimizerConfig::default(),
            mixture: MixtureSpec::default(),
            contamination: ContaminationScheme::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("grid config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.m.is_empty() || self.n.is_empty() || self.eps.is_empty() {
            return cfg("grid axes m, n and eps must be non-empty");
        }
        if self.replications == 0 {
            return cfg("replications must be at least 1");
        }
        if self.estimators.is_empty() || self.metrics.is_empty() {
            return cfg("estimators and metrics must be non-empty");
        }
        if self.base_seed.is_none() {
            return cfg("base_seed is required");
        }
        if self.m.contains(&0) || self.n.contains(&0) || self.big_n.contains(&0) {
            return cfg("m, n and N must be positive");
        }
        for &e in self.eps.iter().chain(&self.eps_h) {
            if !(e.is_finite() && (0.0..0.5).contains(&e)) {
                return Err(Error::Config(format!(
                    "eps and eps_h must lie in [0, 0.5), got {e}"
                )));
            }
        }
        if !(self.bandwidth.is_finite() && self.bandwidth > 0.0) {
            return cfg("bandwidth must be positive");
        }
        self.optimizer
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.mixture.validate()?;
        self.weighting(0.0)
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    fn weighting(&self, eps_h: f64) -> Result<WeightingConfig> {
        let mut w = WeightingConfig::new(self.rule, eps_h)?;
        w.mom_groups = self.mom_groups;
        w.validate()?;
        Ok(w)
    }

    /// Grid points in canonical order.
    pub fn points(&self) -> Vec<GridPoint> {
        let mut out = Vec::new();
        for &m in &self.m {
            for &n in &self.n {
                let ns: Vec<usize> = if self.big_n.is_empty() {
                    vec![m * n]
                } else {
                    self.big_n.clone()
                };
                for &big_n in &ns {
                    for &eps in &self.eps {
                        let hs: Vec<f64> = if self.eps_h.is_empty() {
                            vec![eps]
                        } else {
                            self.eps_h.clone()
                        };
                        for &eps_h in &hs {
                            out.push(GridPoint {
                                grid_id: out.len(),
                                m,
                                n,
                                big_n,
                                eps,
                                eps_h,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub grid_id: usize,
    pub m: usize,
    pub n: usize,
    pub big_n: usize,
    pub eps: f64,
    pub eps_h: f64,
}

/// One row of the results table; `value` is empty when `status` is not `ok`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub grid_id: usize,
    pub m: usize,
    pub n: usize,
    #[serde(rename = "N")]
    pub big_n: usize,
    pub eps: f64,
    pub eps_h: f64,
    pub replication: usize,
    pub estimator: &'static str,
    pub metric: &'static str,
    pub value: Option<f64>,
    pub status: String,
}

struct Replication {
    sources: Vec<LabeledDataset>,
    outliers: Vec<usize>,
    inliers: Vec<usize>,
    target_cov: Vec<f64>,
    target_labels: Vec<usize>,
    dim: usize,
    quads: Vec<MmdQuadratic>,
    single_choice: usize,
    optimizer: OptimizerConfig,
}

fn prepare(grid: &ExperimentGrid, point: &GridPoint, rep: usize, seed: u64) -> Result<Replication> {
    let (gid, r) = (point.grid_id as u64, rep as u64);
    let data = generate_sources(
        &grid.mixture,
        point.m,
        point.n,
        point.big_n,
        &mut stream_rng(seed, gid, r, StreamRole::Generate),
    )?;
    let plan = ContaminationPlan::new(point.eps, grid.contamination.clone())?;
    let collection = contaminate(
        &data.sources,
        &plan,
        &mut stream_rng(seed, gid, r, StreamRole::Contaminate),
    )?;
    let inliers = collection.inliers();
    let single_choice =
        inliers[stream_rng(seed, gid, r, StreamRole::SingleChoice).random_range(0..inliers.len())];
    let mut optimizer = grid.optimizer.clone();
    optimizer.seed = stream_rng(seed, gid, r, StreamRole::Optimizer).random();
    let spec = KernelSpec::gaussian(grid.bandwidth)?;
    let quads = collection
        .sources
        .iter()
        .map(|s| fit_mmd_terms(s, &data.target, &spec))
        .collect::<Result<Vec<_>>>()?;
    Ok(Replication {
        dim: data.target.dim(),
        target_cov: data.target.covariates().to_vec(),
        target_labels: data.target_labels,
        sources: collection.sources,
        outliers: collection.outliers,
        inliers,
        quads,
        single_choice,
        optimizer,
    })
}

/// Inputs shared by every estimator on one set of sources.
#[derive(Debug, Clone, Copy)]
pub struct EstimatorContext<'a> {
    pub quads: &'a [MmdQuadratic],
    pub optimizer: &'a OptimizerConfig,
    /// Weighting for ROD and ROE.
    pub robust: &'a WeightingConfig,
    /// Budget for the Trim baseline.
    pub eps_h: f64,
    /// Source used by the Single baseline.
    pub single: usize,
    /// Inlier set used by the Oracle baseline.
    pub inliers: &'a [usize],
}

/// Runs one estimator. ROE and multi-step ROE start from `rod` when given,
/// otherwise ROD is computed first.
pub fn run_estimator(
    kind: EstimatorKind,
    ctx: &EstimatorContext<'_>,
    rod: Option<&EstimationResult>,
) -> Result<EstimationResult> {
    let (quads, cfg) = (ctx.quads, ctx.optimizer);
    let rod_q = || -> Result<crate::simplex::SimplexVector> {
        match rod {
            Some(r) => Ok(r.q_hat.clone()),
            None => Ok(rod_estimate(quads, cfg, ctx.robust)?.q_hat),
        }
    };
    match kind {
        EstimatorKind::Single => baseline_estimate(quads, &Baseline::Single(ctx.single), cfg),
        EstimatorKind::Average => baseline_estimate(quads, &Baseline::Average, cfg),
        EstimatorKind::Trim => baseline_estimate(quads, &Baseline::Trim { eps_h: ctx.eps_h }, cfg),
        EstimatorKind::Oracle => {
            baseline_estimate(quads, &Baseline::Oracle(ctx.inliers.to_vec()), cfg)
        }
        EstimatorKind::Rod => match rod {
            Some(r) => Ok(r.clone()),
            None => rod_estimate(quads, cfg, ctx.robust),
        },
        EstimatorKind::Roe => roe_estimate(quads, &rod_q()?, cfg, ctx.robust),
        EstimatorKind::RoeMulti => roe_multistep(quads, &rod_q()?, cfg, ctx.robust),
    }
}

/// Sources and weighting for the classifier stage that follows an
/// estimator: baselines train with uniform weights on the sources they use,
/// Trim with trimmed weights, ROD and ROE with the robust weighting.
pub fn classifier_setup(
    kind: EstimatorKind,
    ctx: &EstimatorContext<'_>,
) -> Result<(Vec<usize>, WeightingConfig)> {
    let all: Vec<usize> = (0..ctx.quads.len()).collect();
    Ok(match kind {
        EstimatorKind::Single => (vec![ctx.single], WeightingConfig::uniform()),
        EstimatorKind::Average => (all, WeightingConfig::uniform()),
        EstimatorKind::Oracle => (ctx.inliers.to_vec(), WeightingConfig::uniform()),
        EstimatorKind::Trim => (all, WeightingConfig::new(WeightRule::Trimmed, ctx.eps_h)?),
        EstimatorKind::Rod | EstimatorKind::Roe | EstimatorKind::RoeMulti => (all, *ctx.robust),
    })
}

fn run_replication(
    grid: &ExperimentGrid,
    point: &GridPoint,
    rep_idx: usize,
    seed: u64,
) -> Vec<ResultRow> {
    let row = |est: EstimatorKind, metric: MetricKind, outcome: &Result<f64>| ResultRow {
        grid_id: point.grid_id,
        m: point.m,
        n: point.n,
        big_n: point.big_n,
        eps: point.eps,
        eps_h: point.eps_h,
        replication: rep_idx,
        estimator: est.name(),
        metric: metric.name(),
        value: outcome.as_ref().ok().copied(),
        status: match outcome {
            Ok(_) => "ok".to_string(),
            Err(e) => e.code().to_string(),
        },
    };
    let mut rows = Vec::with_capacity(grid.estimators.len() * grid.metrics.len());

    let prepared = grid
        .weighting(point.eps_h)
        .and_then(|w| Ok((w, prepare(grid, point, rep_idx, seed)?)));
    let (robust, rep) = match prepared {
        Ok(p) => p,
        Err(e) => {
            log::warn!("grid point {} replication {rep_idx}: {e}", point.grid_id);
            for &est in &grid.estimators {
                for &metric in &grid.metrics {
                    rows.push(row(est, metric, &Err(clone_error(&e))));
                }
            }
            return rows;
        }
    };
    let ctx = EstimatorContext {
        quads: &rep.quads,
        optimizer: &rep.optimizer,
        robust: &robust,
        eps_h: point.eps_h,
        single: rep.single_choice,
        inliers: &rep.inliers,
    };

    let mut rod_cache: Option<Result<EstimationResult>> = None;
    for &est in &grid.estimators {
        let estimate = match est {
            EstimatorKind::Rod | EstimatorKind::Roe | EstimatorKind::RoeMulti => {
                match rod_cache.get_or_insert_with(|| run_estimator(EstimatorKind::Rod, &ctx, None))
                {
                    Ok(rod) => run_estimator(est, &ctx, Some(rod)),
                    Err(e) => Err(clone_error(e)),
                }
            }
            _ => run_estimator(est, &ctx, None),
        };
        for &metric in &grid.metrics {
            let value = estimate
                .as_ref()
                .map_err(clone_error)
                .and_then(|res| match metric {
                    MetricKind::Mse => mse_metric(
                        res.q_hat.as_slice(),
                        grid.mixture.target_proportions.as_slice(),
                    ),
                    MetricKind::Fsn => Ok(fsn_metric(res.weights.selected(), &rep.outliers) as f64),
                    MetricKind::Misclassification => {
                        let (subset, wcfg) = classifier_setup(est, &ctx)?;
                        let sources: Vec<LabeledDataset> =
                            subset.iter().map(|&j| rep.sources[j].clone()).collect();
                        let params = train_calibrated_classifier(
                            &sources,
                            &res.q_hat,
                            &rep.optimizer,
                            &wcfg,
                            None,
                        )?;
                        let predicted = predict_labels(&params, &rep.target_cov, rep.dim)?;
                        misclassification_error(&predicted, &rep.target_labels)
                    }
                });
            if let Err(e) = &value {
                log::warn!(
                    "grid point {} replication {rep_idx} {} {}: {e}",
                    point.grid_id,
                    est.name(),
                    metric.name()
                );
            }
            rows.push(row(est, metric, &value));
        }
    }
    rows
}

/// Rebuilds an error for a second report; I/O errors keep only their text.
pub(crate) fn clone_error(e: &Error) -> Error {
    match e {
        Error::Argument(s) => Error::Argument(s.clone()),
        Error::DegenerateSource {
            class,
            count,
            required,
        } => Error::DegenerateSource {
            class: *class,
            count: *count,
            required: *required,
        },
        Error::ZeroProportion { class } => Error::ZeroProportion { class: *class },
        Error::Numerical { iteration, message } => Error::Numerical {
            iteration: *iteration,
            message: message.clone(),
        },
        Error::Parse {
            path,
            line,
            message,
        } => Error::Parse {
            path: path.clone(),
            line: *line,
            message: message.clone(),
        },
        Error::Schema {
            path,
            line,
            message,
        } => Error::Schema {
            path: path.clone(),
            line: *line,
            message: message.clone(),
        },
        Error::EmptyDataset(s) => Error::EmptyDataset(s.clone()),
        Error::Config(s) => Error::Config(s.clone()),
        Error::Contamination(s) => Error::Contamination(s.clone()),
        Error::Generation(s) => Error::Generation(s.clone()),
        Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), io.to_string())),
    }
}

/// Runs every (grid point, replication) task on a pool of `workers` threads
/// and returns rows in canonical order: grid point, replication, estimator
/// (config order), metric (config order).
pub fn run_experiment_grid(grid: &ExperimentGrid, workers: usize) -> Result<Vec<ResultRow>> {
    grid.validate()?;
    let seed = grid.base_seed.expect("validated");
    let tasks: Vec<(GridPoint, usize)> = grid
        .points()
        .into_iter()
        .flat_map(|p| (0..grid.replications).map(move |r| (p, r)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    log::info!(
        "running {} tasks on {} workers",
        tasks.len(),
        workers.max(1)
    );
    let nested: Vec<Vec<ResultRow>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|(p, r)| run_replication(grid, p, *r, seed))
            .collect()
    });
    Ok(nested.into_iter().flatten().collect())
}

/// Serializes rows with the results header.
pub fn results_csv(rows: &[ResultRow]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    w.write_record(RESULTS_HEADER.split(','))
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    for r in rows {
        w.serialize(r)
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    w.into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

/// Mean of the successful values for one (grid point, estimator, metric).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub grid_id: usize,
    pub estimator: &'static str,
    pub metric: &'static str,
    pub mean: f64,
    pub ok_count: usize,
    pub failed_count: usize,
}

pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut out: Vec<SummaryRow> = Vec::new();
    let mut sums: Vec<f64> = Vec::new();
    for r in rows {
        let pos = out.iter().position(|s| {
            s.grid_id == r.grid_id && s.estimator == r.estimator && s.metric == r.metric
        });
        let i = pos.unwrap_or_else(|| {
            out.push(SummaryRow {
                grid_id: r.grid_id,
                estimator: r.estimator,
                metric: r.metric,
                mean: f64::NAN,
                ok_count: 0,
                failed_count: 0,
            });
            sums.push(0.0);
            out.len() - 1
        });
        match r.value {
            Some(v) => {
                sums[i] += v;
                out[i].ok_count += 1;
            }
            None => out[i].failed_count += 1,
        }
    }
    for (s, total) in out.iter_mut().zip(sums) {
        if s.ok_count > 0 {
            s.mean = total / s.ok_count as f64;
        }
    }
    out
}
