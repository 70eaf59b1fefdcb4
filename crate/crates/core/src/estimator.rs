//! Robust class-proportion estimators over a set of per-source MMD losses.
//!
//! All estimators share one alternating scheme: at the current iterate the
//! per-source criterion values are turned into robust weights, then a
//! projected gradient step is taken on the weighted loss. The criterion is
//! either the loss itself (divergence mode, ROD) or the excess loss over a
//! reference point `q'` (excess mode, ROE).

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::MmdQuadratic;
use crate::numeric::l2_distance;
use crate::simplex::{project_simplex, SimplexVector};
use crate::weighting::{trimmed_weights, RobustWeights, WeightRule, WeightingConfig};

/// Power-method iterations used to bound the curvature of each loss.
const POWER_ITERATIONS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// `gamma_0 / (2 max_j ||A_j||)`, constant over iterations.
    InverseLipschitz,
    /// `gamma_0 / sqrt(t)`.
    SqrtDecay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitRule {
    Uniform,
    SeededRandom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub max_iters: usize,
    pub step_rule: StepRule,
    pub step_scale: f64,
    pub tol: f64,
    pub refine_steps: usize,
    pub init: InitRule,
    pub restarts: usize,
    /// Seed for random initial points (used by `SeededRandom` and by every
    /// restart after the first).
    pub seed: u64,
    pub record_trace: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iters: 500,
            step_rule: StepRule::InverseLipschitz,
            step_scale: 1.0,
            tol: 1e-8,
            refine_steps: 2,
            init: InitRule::Uniform,
            restarts: 1,
            seed: 0,
            record_trace: false,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::arg("max_iters must be at least 1"));
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(Error::arg(format!(
                "tol must be positive, got {}",
                self.tol
            )));
        }
        if !(self.step_scale.is_finite() && self.step_scale > 0.0) {
            return Err(Error::arg(format!(
                "step_scale must be positive, got {}",
                self.step_scale
            )));
        }
        if self.restarts == 0 {
            return Err(Error::arg("restarts must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimationResult {
    pub q_hat: SimplexVector,
    /// Robust weights evaluated at `q_hat`. When every criterion value there
    /// is identical (ROE stopping exactly on its reference point), the
    /// weights of the step that produced `q_hat` are reported instead.
    pub weights: RobustWeights,
    pub iterations_used: usize,
    /// Robust mean of the criterion values at `q_hat`.
    pub objective: f64,
    pub trace: Option<Vec<f64>>,
}

/// What the robust weights are computed from.
#[derive(Debug, Clone, Copy)]
pub enum LossMode<'a> {
    /// `L_j(q)`.
    Divergence,
    /// `L_j(q) - L_j(q')`.
    Excess(&'a SimplexVector),
}

fn check_quads(quads: &[MmdQuadratic]) -> Result<usize> {
    let first = quads
        .first()
        .ok_or_else(|| Error::arg("at least one source loss is required"))?;
    let k = first.num_classes();
    if let Some(j) = quads.iter().position(|q| q.num_classes() != k) {
        return Err(Error::arg(format!(
            "source {j} has {} classes, expected {k}",
            quads[j].num_classes()
        )));
    }
    Ok(k)
}

struct Criterion<'a> {
    quads: &'a [MmdQuadratic],
    offsets: Vec<f64>,
}

impl<'a> Criterion<'a> {
    fn new(quads: &'a [MmdQuadratic], mode: LossMode<'_>) -> Self {
        let offsets = match mode {
            LossMode::Divergence => vec![0.0; quads.len()],
            LossMode::Excess(q_ref) => quads
                .iter()
                .map(|quad| quad.loss_unchecked(q_ref.as_slice()))
                .collect(),
        };
        Self { quads, offsets }
    }

    fn values(&self, q: &[f64], iteration: usize) -> Result<Vec<f64>> {
        let vals: Vec<f64> = self
            .quads
            .iter()
            .zip(&self.offsets)
            .map(|(quad, off)| quad.loss_unchecked(q) - off)
            .collect();
        if let Some(j) = vals.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical {
                iteration,
                message: format!("loss of source {j} is not finite"),
            });
        }
        Ok(vals)
    }
}

struct Evaluated {
    q: SimplexVector,
    weights: RobustWeights,
    objective: f64,
    /// Every criterion value is the same, so the weights carry no
    /// information (e.g. `q` equals the excess reference point).
    tied: bool,
    /// Weights of the update that produced `q`; `None` for the start point.
    producing: Option<RobustWeights>,
}

/// Alternating robust-weight / projected-gradient solver.
///
/// Returns the iterate with the lowest robust objective seen (ties go to the
/// earlier iterate); with several restarts, the best over restarts (ties go
/// to the earlier restart).
pub fn solve_weighted(
    quads: &[MmdQuadratic],
    mode: LossMode<'_>,
    cfg: &OptimizerConfig,
    wcfg: &WeightingConfig,
) -> Result<EstimationResult> {
    let k = check_quads(quads)?;
    cfg.validate()?;
    wcfg.validate()?;
    if let LossMode::Excess(q_ref) = mode {
        if q_ref.len() != k {
            return Err(Error::arg(format!(
                "reference point has {} classes, expected {k}",
                q_ref.len()
            )));
        }
    }
    let criterion = Criterion::new(quads, mode);
    if k == 1 {
        let q = SimplexVector::uniform(1);
        let vals = criterion.values(q.as_slice(), 0)?;
        let weights = wcfg.weights(&vals)?;
        let objective = weights.weighted_mean(&vals);
        return Ok(EstimationResult {
            q_hat: q,
            weights,
            iterations_used: 0,
            objective,
            trace: cfg.record_trace.then(Vec::new),
        });
    }

    let curvature = quads
        .iter()
        .map(|q| q.spectral_norm_estimate(POWER_ITERATIONS))
        .fold(0.0, f64::max);

    let runs: Vec<Result<EstimationResult>> = (0..cfg.restarts)
        .into_par_iter()
        .map(|r| {
            let q0 = initial_point(k, cfg, r);
            run_once(&criterion, q0, curvature, cfg, wcfg)
        })
        .collect();

    let mut best: Option<EstimationResult> = None;
    for run in runs {
        let run = run?;
        if best.as_ref().is_none_or(|b| run.objective < b.objective) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn initial_point(k: usize, cfg: &OptimizerConfig, restart: usize) -> SimplexVector {
    if restart == 0 && cfg.init == InitRule::Uniform {
        return SimplexVector::uniform(k);
    }
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    rng.set_stream(restart as u64);
    let draws: Vec<f64> = (0..k).map(|_| Exp1.sample(&mut rng)).collect();
    let total: f64 = draws.iter().sum();
    project_simplex(&draws.iter().map(|d| d / total).collect::<Vec<_>>()).expect("finite draws")
}

fn run_once(
    criterion: &Criterion<'_>,
    q0: SimplexVector,
    curvature: f64,
    cfg: &OptimizerConfig,
    wcfg: &WeightingConfig,
) -> Result<EstimationResult> {
    let k = q0.len();
    let mut trace = cfg.record_trace.then(Vec::new);
    let evaluate = |q: SimplexVector, iteration: usize| -> Result<Evaluated> {
        let vals = criterion.values(q.as_slice(), iteration)?;
        let weights = wcfg.weights(&vals)?;
        let objective = weights.weighted_mean(&vals);
        let tied = vals.iter().all(|v| *v == vals[0]);
        Ok(Evaluated {
            q,
            weights,
            objective,
            tied,
            producing: None,
        })
    };

    let mut current = evaluate(q0, 0)?;
    let mut best: Option<Evaluated> = None;
    let mut iterations = 0;
    for t in 1..=cfg.max_iters {
        iterations = t;
        if let Some(tr) = trace.as_mut() {
            tr.push(current.objective);
        }
        let mut grad = vec![0.0; k];
        for &j in current.weights.selected() {
            criterion.quads[j].accumulate_gradient(
                current.q.as_slice(),
                current.weights.weights()[j],
                &mut grad,
            );
        }
        let step = match cfg.step_rule {
            StepRule::InverseLipschitz if curvature > 0.0 => cfg.step_scale / (2.0 * curvature),
            StepRule::InverseLipschitz => cfg.step_scale,
            StepRule::SqrtDecay => cfg.step_scale / (t as f64).sqrt(),
        };
        let moved: Vec<f64> = current
            .q
            .as_slice()
            .iter()
            .zip(&grad)
            .map(|(q, g)| q - step * g)
            .collect();
        let next = project_simplex(&moved).map_err(|e| Error::Numerical {
            iteration: t,
            message: e.to_string(),
        })?;
        let delta = l2_distance(next.as_slice(), current.q.as_slice());
        let mut next = evaluate(next, t)?;
        next.producing = Some(current.weights.clone());
        let prev = std::mem::replace(&mut current, next);
        if best.as_ref().is_none_or(|b| prev.objective < b.objective) {
            best = Some(prev);
        }
        if delta < cfg.tol {
            break;
        }
    }
    if let Some(tr) = trace.as_mut() {
        tr.push(current.objective);
    }
    if best
        .as_ref()
        .is_none_or(|b| current.objective < b.objective)
    {
        best = Some(current);
    }
    let best = best.expect("at least one iterate");
    Ok(EstimationResult {
        q_hat: best.q,
        weights: match best.producing {
            Some(w) if best.tied => w,
            _ => best.weights,
        },
        iterations_used: iterations,
        objective: best.objective,
        trace,
    })
}

/// Divergence-weighted estimate (ROD).
pub fn rod_estimate(
    quads: &[MmdQuadratic],
    cfg: &OptimizerConfig,
    wcfg: &WeightingConfig,
) -> Result<EstimationResult> {
    solve_weighted(quads, LossMode::Divergence, cfg, wcfg)
}

/// Excess-loss-weighted one-step refinement of `q_prime` (ROE).
pub fn roe_estimate(
    quads: &[MmdQuadratic],
    q_prime: &SimplexVector,
    cfg: &OptimizerConfig,
    wcfg: &WeightingConfig,
) -> Result<EstimationResult> {
    solve_weighted(quads, LossMode::Excess(q_prime), cfg, wcfg)
}

/// ROE with the reference point taken from ROD.
pub fn roe_from_rod(
    quads: &[MmdQuadratic],
    cfg: &OptimizerConfig,
    wcfg: &WeightingConfig,
) -> Result<(EstimationResult, EstimationResult)> {
    let rod = rod_estimate(quads, cfg, wcfg)?;
    let roe = roe_estimate(quads, &rod.q_hat, cfg, wcfg)?;
    Ok((rod, roe))
}

/// Repeated ROE, each step using the previous estimate as the reference
/// point. Runs `cfg.refine_steps` steps from `q0` and returns the last.
pub fn roe_multistep(
    quads: &[MmdQuadratic],
    q0: &SimplexVector,
    cfg: &OptimizerConfig,
    wcfg: &WeightingConfig,
) -> Result<EstimationResult> {
    if cfg.refine_steps == 0 {
        return Err(Error::arg("refine_steps must be at least 1"));
    }
    let mut result = roe_estimate(quads, q0, cfg, wcfg)?;
    for _ in 1..cfg.refine_steps {
        let reference = result.q_hat.clone();
        result = roe_estimate(quads, &reference, cfg, wcfg)?;
    }
    Ok(result)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Baseline {
    /// Minimize one source's loss.
    Single(usize),
    /// Minimize the uniform mean over all sources.
    Average,
    /// Trimmed loss minimization at budget `eps_h`.
    Trim { eps_h: f64 },
    /// Uniform mean over a known inlier set.
    Oracle(Vec<usize>),
}

pub fn baseline_estimate(
    quads: &[MmdQuadratic],
    kind: &Baseline,
    cfg: &OptimizerConfig,
) -> Result<EstimationResult> {
    let m = quads.len();
    check_quads(quads)?;
    match kind {
        Baseline::Average => solve_weighted(
            quads,
            LossMode::Divergence,
            cfg,
            &WeightingConfig::uniform(),
        ),
        Baseline::Trim { eps_h } => {
            // validates eps_h against m before the solve
            trimmed_weights(&vec![0.0; m], *eps_h)?;
            let wcfg = WeightingConfig::new(WeightRule::Trimmed, *eps_h)?;
            solve_weighted(quads, LossMode::Divergence, cfg, &wcfg)
        }
        Baseline::Single(j) => {
            if *j >= m {
                return Err(Error::arg(format!(
                    "source {j} out of range for {m} sources"
                )));
            }
            solve_subset(quads, &[*j], cfg)
        }
        Baseline::Oracle(inliers) => {
            if inliers.is_empty() {
                return Err(Error::arg("oracle needs a non-empty inlier set"));
            }
            let mut set = inliers.clone();
            set.sort_unstable();
            set.dedup();
            if let Some(&j) = set.iter().find(|&&j| j >= m) {
                return Err(Error::arg(format!(
                    "inlier {j} out of range for {m} sources"
                )));
            }
            solve_subset(quads, &set, cfg)
        }
    }
}

/// Uniform-weight solve over `subset`, with weights reported over all sources.
fn solve_subset(
    quads: &[MmdQuadratic],
    subset: &[usize],
    cfg: &OptimizerConfig,
) -> Result<EstimationResult> {
    let picked: Vec<MmdQuadratic> = subset.iter().map(|&j| quads[j].clone()).collect();
    let result = solve_weighted(
        &picked,
        LossMode::Divergence,
        cfg,
        &WeightingConfig::uniform(),
    )?;
    Ok(EstimationResult {
        weights: RobustWeights::equal_on(quads.len(), subset.to_vec()),
        ..result
    })
}
