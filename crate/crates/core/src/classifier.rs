//! Label-shift-calibrated multinomial logistic classifier.
//!
//! Each source's samples are reweighted by `q_hat[y] / p_hat_j[y]` so that its
//! empirical risk targets the estimated target label distribution. Sources are
//! then combined with robust weights computed from their excess risks over a
//! preliminary fit, refreshed at every gradient step.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::estimator::{OptimizerConfig, StepRule};
use crate::simplex::SimplexVector;
use crate::weighting::{RobustWeights, WeightingConfig};

/// Default ridge penalty on the (standardized) score parameters.
pub const DEFAULT_L2: f64 = 1e-4;

/// Affine class scores: row `k` is `[bias, w_1, ..., w_d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    num_classes: usize,
    dim: usize,
    rows: Vec<f64>,
}

impl ClassifierParams {
    /// Builds parameters from row-major `K x (d+1)` values. Row 0 is
    /// subtracted from every row so the first class scores zero; predictions
    /// are unaffected.
    pub fn new(num_classes: usize, dim: usize, mut rows: Vec<f64>) -> Result<Self> {
        if num_classes == 0 || dim == 0 {
            return Err(Error::arg(
                "classifier needs at least one class and one feature",
            ));
        }
        let width = dim + 1;
        if rows.len() != num_classes * width {
            return Err(Error::arg(format!(
                "expected {} parameters, got {}",
                num_classes * width,
                rows.len()
            )));
        }
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("classifier parameters must be finite"));
        }
        let first: Vec<f64> = rows[..width].to_vec();
        for row in rows.chunks_exact_mut(width) {
            row.iter_mut().zip(&first).for_each(|(v, f)| *v -= f);
        }
        Ok(Self {
            num_classes,
            dim,
            rows,
        })
    }

    pub fn zeros(num_classes: usize, dim: usize) -> Self {
        Self {
            num_classes,
            dim,
            rows: vec![0.0; num_classes * (dim + 1)],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.rows[k * (self.dim + 1)..(k + 1) * (self.dim + 1)]
    }

    pub fn scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::arg(format!(
                "sample has dimension {} but the classifier expects {}",
                x.len(),
                self.dim
            )));
        }
        Ok((0..self.num_classes)
            .map(|k| affine(self.row(k), x))
            .collect())
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.num_classes, self.dim);
        for k in 0..self.num_classes {
            let row: Vec<String> = self.row(k).iter().map(|v| format!("{v}")).collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
        out
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let parse_err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line: line as u64,
            message,
        };
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (ln, header) = lines.next().ok_or_else(|| {
            Error::EmptyDataset(format!("model file {} is empty", path.display()))
        })?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| parse_err(ln + 1, format!("bad header: {e}")))?;
        let [k, d] = dims[..] else {
            return Err(parse_err(ln + 1, "header must be \"K d\"".into()));
        };
        let mut rows = Vec::with_capacity(k * (d + 1));
        for _ in 0..k {
            let (ln, line) = lines
                .next()
                .ok_or_else(|| parse_err(0, format!("expected {k} parameter rows")))?;
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(str::parse::<f64>)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| parse_err(ln + 1, e.to_string()))?;
            if vals.len() != d + 1 {
                return Err(parse_err(
                    ln + 1,
                    format!("expected {} values, found {}", d + 1, vals.len()),
                ));
            }
            rows.extend(vals);
        }
        if let Some((ln, _)) = lines.next() {
            return Err(parse_err(ln + 1, "unexpected trailing row".into()));
        }
        Self::new(k, d, rows)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?, path)
    }
}

#[inline]
fn affine(row: &[f64], x: &[f64]) -> f64 {
    row[0] + row[1..].iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
}

/// Empirical label proportions `n_{j,k} / n`; every class must be present.
pub fn source_label_proportions(source: &LabeledDataset) -> Result<SimplexVector> {
    source.require_class_counts(1)?;
    let n = source.n_rows() as f64;
    let props: Vec<f64> = source
        .class_counts()
        .iter()
        .map(|&c| c as f64 / n)
        .collect();
    SimplexVector::new(props)
}

/// Per-sample weights `q_hat[y_i] / p_hat[y_i]`.
pub fn importance_weights(
    q_hat: &SimplexVector,
    p_hat: &SimplexVector,
    labels: &[usize],
) -> Result<Vec<f64>> {
    if q_hat.len() != p_hat.len() {
        return Err(Error::arg(format!(
            "target proportions have {} classes, source proportions {}",
            q_hat.len(),
            p_hat.len()
        )));
    }
    if let Some(class) = (0..p_hat.len()).find(|&k| p_hat[k] <= 0.0) {
        return Err(Error::ZeroProportion { class });
    }
    labels
        .iter()
        .map(|&y| {
            if y >= q_hat.len() {
                Err(Error::arg(format!(
                    "label {} exceeds {} classes",
                    y + 1,
                    q_hat.len()
                )))
            } else {
                Ok(q_hat[y] / p_hat[y])
            }
        })
        .collect()
}

/// Argmax of the class scores; ties go to the smaller class index.
pub fn predict_labels(
    params: &ClassifierParams,
    covariates: &[f64],
    dim: usize,
) -> Result<Vec<usize>> {
    if dim != params.dim || !covariates.len().is_multiple_of(dim.max(1)) {
        return Err(Error::arg(format!(
            "covariates of dimension {dim} do not match the classifier's {}",
            params.dim
        )));
    }
    Ok(covariates
        .chunks_exact(dim)
        .map(|x| {
            let mut best = 0;
            let mut best_score = affine(params.row(0), x);
            for k in 1..params.num_classes {
                let s = affine(params.row(k), x);
                if s > best_score {
                    best = k;
                    best_score = s;
                }
            }
            best
        })
        .collect())
}

/// One source prepared for training: standardized covariates, labels and
/// importance weights.
struct PreparedSource {
    z: Vec<f64>,
    labels: Vec<usize>,
    omega: Vec<f64>,
}

/// Pooled feature standardization `z = (x - mean) / scale`.
struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    fn fit(sources: &[LabeledDataset], dim: usize) -> Self {
        let total: usize = sources.iter().map(|s| s.n_rows()).sum();
        let mut mean = vec![0.0; dim];
        for s in sources {
            for row in s.covariates().chunks_exact(dim) {
                mean.iter_mut().zip(row).for_each(|(m, x)| *m += x);
            }
        }
        mean.iter_mut().for_each(|m| *m /= total as f64);
        let mut var = vec![0.0; dim];
        for s in sources {
            for row in s.covariates().chunks_exact(dim) {
                for i in 0..dim {
                    var[i] += (row[i] - mean[i]).powi(2);
                }
            }
        }
        let scale = var
            .into_iter()
            .map(|v| {
                let sd = (v / total as f64).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, scale }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let d = self.mean.len();
        x.chunks_exact(d)
            .flat_map(|row| (0..d).map(move |i| (row[i] - self.mean[i]) / self.scale[i]))
            .collect()
    }

    /// Raw-space parameters to standardized-space parameters.
    fn to_standard(&self, rows: &[f64], k: usize) -> Vec<f64> {
        let d = self.mean.len();
        let mut out = rows.to_vec();
        for c in 0..k {
            let row = &mut out[c * (d + 1)..(c + 1) * (d + 1)];
            for i in 0..d {
                row[0] += row[i + 1] * self.mean[i];
                row[i + 1] *= self.scale[i];
            }
        }
        out
    }

    fn to_raw(&self, rows: &[f64], k: usize) -> Vec<f64> {
        let d = self.mean.len();
        let mut out = rows.to_vec();
        for c in 0..k {
            let row = &mut out[c * (d + 1)..(c + 1) * (d + 1)];
            for i in 0..d {
                row[i + 1] /= self.scale[i];
                row[0] -= row[i + 1] * self.mean[i];
            }
        }
        out
    }
}

/// Importance-weighted mean log-loss of one source and its gradient with
/// respect to the free rows (1..K) of the parameters.
fn source_risk(src: &PreparedSource, theta: &[f64], k: usize, d: usize) -> (f64, Vec<f64>) {
    let width = d + 1;
    let n = src.labels.len() as f64;
    let mut risk = 0.0;
    let mut grad = vec![0.0; k * width];
    let mut scores = vec![0.0; k];
    for ((x, &y), &w) in src.z.chunks_exact(d).zip(&src.labels).zip(&src.omega) {
        if w == 0.0 {
            continue;
        }
        for c in 0..k {
            scores[c] = affine(&theta[c * width..(c + 1) * width], x);
        }
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = scores.iter().map(|s| (s - max).exp()).sum();
        let log_norm = max + denom.ln();
        risk += w * (log_norm - scores[y]);
        for c in 1..k {
            let p = (scores[c] - log_norm).exp();
            let coef = w * (p - if c == y { 1.0 } else { 0.0 });
            let row = &mut grad[c * width..(c + 1) * width];
            row[0] += coef;
            for i in 0..d {
                row[i + 1] += coef * x[i];
            }
        }
    }
    grad.iter_mut().for_each(|g| *g /= n);
    (risk / n, grad)
}

struct Trainer<'a> {
    sources: &'a [PreparedSource],
    k: usize,
    d: usize,
    l2: f64,
    lipschitz: f64,
}

impl Trainer<'_> {
    fn risks(&self, theta: &[f64]) -> Vec<(f64, Vec<f64>)> {
        self.sources
            .par_iter()
            .map(|s| source_risk(s, theta, self.k, self.d))
            .collect()
    }

    fn penalty(&self, theta: &[f64]) -> f64 {
        self.l2 * theta.iter().map(|t| t * t).sum::<f64>()
    }

    /// Gradient descent on `sum_j w_j R_j(theta) + l2 ||theta||^2`, with `w`
    /// recomputed each step from `R_j(theta) - offsets_j`. Returns the
    /// parameters with the lowest robust objective seen.
    fn fit(
        &self,
        start: Vec<f64>,
        offsets: &[f64],
        cfg: &OptimizerConfig,
        wcfg: &WeightingConfig,
    ) -> Result<Vec<f64>> {
        let mut theta = start;
        let mut best: Option<(f64, Vec<f64>)> = None;
        for t in 1..=cfg.max_iters + 1 {
            let evals = self.risks(&theta);
            let crit: Vec<f64> = evals.iter().zip(offsets).map(|((r, _), o)| r - o).collect();
            if let Some(j) = crit.iter().position(|v| !v.is_finite()) {
                return Err(Error::Numerical {
                    iteration: t - 1,
                    message: format!("classification risk of source {j} is not finite"),
                });
            }
            let weights: RobustWeights = wcfg.weights(&crit)?;
            let objective = weights.weighted_mean(&crit) + self.penalty(&theta);
            if best.as_ref().is_none_or(|(b, _)| objective < *b) {
                best = Some((objective, theta.clone()));
            }
            if t > cfg.max_iters {
                break;
            }
            let mut grad: Vec<f64> = theta.iter().map(|th| 2.0 * self.l2 * th).collect();
            for &j in weights.selected() {
                let w = weights.weights()[j];
                grad.iter_mut()
                    .zip(&evals[j].1)
                    .for_each(|(g, s)| *g += w * s);
            }
            // row 0 stays pinned at zero
            grad[..self.d + 1].iter_mut().for_each(|g| *g = 0.0);
            let step = match cfg.step_rule {
                StepRule::InverseLipschitz => cfg.step_scale / self.lipschitz,
                StepRule::SqrtDecay => cfg.step_scale / (t as f64).sqrt(),
            };
            let mut moved = 0.0;
            for (th, g) in theta.iter_mut().zip(&grad) {
                *th -= step * g;
                moved += (step * g) * (step * g);
            }
            if moved.sqrt() < cfg.tol {
                let evals = self.risks(&theta);
                let crit: Vec<f64> = evals.iter().zip(offsets).map(|((r, _), o)| r - o).collect();
                if crit.iter().all(|v| v.is_finite()) {
                    let weights = wcfg.weights(&crit)?;
                    let objective = weights.weighted_mean(&crit) + self.penalty(&theta);
                    if best.as_ref().is_none_or(|(b, _)| objective < *b) {
                        best = Some((objective, theta.clone()));
                    }
                }
                break;
            }
        }
        Ok(best.expect("at least one evaluation").1)
    }
}

/// Trains the calibrated classifier with the default ridge penalty.
pub fn train_calibrated_classifier(
    sources: &[LabeledDataset],
    q_hat: &SimplexVector,
    cfg: &OptimizerConfig,
    wcfg: &WeightingConfig,
    theta_prime: Option<&ClassifierParams>,
) -> Result<ClassifierParams> {
    train_calibrated_classifier_with(sources, q_hat, cfg, wcfg, theta_prime, DEFAULT_L2)
}

/// Trains the calibrated classifier.
///
/// `theta_prime` is the reference fit for the excess risks; when absent a
/// preliminary fit with uniform source weights is used. Covariates are
/// standardized with pooled statistics before fitting and the returned
/// parameters are mapped back to raw covariate units.
pub fn train_calibrated_classifier_with(
    sources: &[LabeledDataset],
    q_hat: &SimplexVector,
    cfg: &OptimizerConfig,
    wcfg: &WeightingConfig,
    theta_prime: Option<&ClassifierParams>,
    l2: f64,
) -> Result<ClassifierParams> {
    cfg.validate()?;
    wcfg.validate()?;
    if !(l2.is_finite() && l2 >= 0.0) {
        return Err(Error::arg(format!(
            "l2 penalty must be nonnegative, got {l2}"
        )));
    }
    let first = sources
        .first()
        .ok_or_else(|| Error::arg("at least one source is required"))?;
    let (k, d) = (first.num_classes(), first.dim());
    if q_hat.len() != k {
        return Err(Error::arg(format!(
            "target proportions have {} classes, sources have {k}",
            q_hat.len()
        )));
    }
    if let Some(j) = sources
        .iter()
        .position(|s| s.num_classes() != k || s.dim() != d)
    {
        return Err(Error::arg(format!(
            "source {j} disagrees on classes or dimension"
        )));
    }
    if let Some(tp) = theta_prime {
        if tp.num_classes != k || tp.dim != d {
            return Err(Error::arg("reference classifier has the wrong shape"));
        }
    }
    if k == 1 {
        return Ok(ClassifierParams::zeros(1, d));
    }

    let standardizer = Standardizer::fit(sources, d);
    let prepared: Vec<PreparedSource> = sources
        .iter()
        .map(|s| {
            let p_hat = source_label_proportions(s)?;
            Ok(PreparedSource {
                z: standardizer.apply(s.covariates()),
                labels: s.labels().to_vec(),
                omega: importance_weights(q_hat, &p_hat, s.labels())?,
            })
        })
        .collect::<Result<_>>()?;

    let lipschitz = prepared
        .iter()
        .map(|s| {
            let n = s.labels.len() as f64;
            0.5 * s
                .z
                .chunks_exact(d)
                .zip(&s.omega)
                .map(|(x, w)| w * (1.0 + x.iter().map(|v| v * v).sum::<f64>()))
                .sum::<f64>()
                / n
        })
        .fold(0.0, f64::max)
        + 2.0 * l2;
    let trainer = Trainer {
        sources: &prepared,
        k,
        d,
        l2,
        lipschitz: if lipschitz > 0.0 { lipschitz } else { 1.0 },
    };

    let zeros = vec![0.0; k * (d + 1)];
    let reference = match theta_prime {
        Some(tp) => standardizer.to_standard(&tp.rows, k),
        None => trainer.fit(
            zeros.clone(),
            &vec![0.0; prepared.len()],
            cfg,
            &WeightingConfig::uniform(),
        )?,
    };
    let offsets: Vec<f64> = trainer
        .risks(&reference)
        .into_iter()
        .map(|(r, _)| r)
        .collect();
    let theta = trainer.fit(reference, &offsets, cfg, wcfg)?;
    ClassifierParams::new(k, d, standardizer.to_raw(&theta, k))
}
