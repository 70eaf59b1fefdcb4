//! Robust weighting functions over scalar per-source values.
//!
//! Every rule returns weights that are zero or a common positive value and
//! sum to one. Orderings use a stable sort on `(value, original index)`, so
//! duplicates at a cut point are resolved toward the lower index.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightRule {
    /// Minimum-variance subset of size `m - floor(eps_h m)`.
    Mwv,
    /// Drop `floor(eps_h m)` values from each tail.
    Truncated,
    /// Drop the `floor(eps_h m)` largest values.
    Trimmed,
    /// Keep the block whose mean is the median of block means.
    MedianOfMeans,
}

impl WeightRule {
    pub fn name(&self) -> &'static str {
        match self {
            WeightRule::Mwv => "mwv",
            WeightRule::Truncated => "truncated",
            WeightRule::Trimmed => "trimmed",
            WeightRule::MedianOfMeans => "median_of_means",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightingConfig {
    pub rule: WeightRule,
    pub eps_h: f64,
    pub mom_groups: usize,
}

impl WeightingConfig {
    pub fn new(rule: WeightRule, eps_h: f64) -> Result<Self> {
        let cfg = Self {
            rule,
            eps_h,
            mom_groups: 1,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn median_of_means(groups: usize) -> Result<Self> {
        let cfg = Self {
            rule: WeightRule::MedianOfMeans,
            eps_h: 0.0,
            mom_groups: groups,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Uniform weights over every source.
    pub fn uniform() -> Self {
        Self {
            rule: WeightRule::Mwv,
            eps_h: 0.0,
            mom_groups: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps_h.is_finite() && (0.0..0.5).contains(&self.eps_h)) {
            return Err(Error::arg(format!(
                "eps_h must lie in [0, 0.5), got {}",
                self.eps_h
            )));
        }
        if self.rule == WeightRule::MedianOfMeans && self.mom_groups.is_multiple_of(2) {
            return Err(Error::arg(format!(
                "median-of-means needs an odd group count, got {}",
                self.mom_groups
            )));
        }
        Ok(())
    }

    /// Weights for `values` under the configured rule.
    pub fn weights(&self, values: &[f64]) -> Result<RobustWeights> {
        self.validate()?;
        match self.rule {
            WeightRule::Mwv => mwv_weights(values, self.eps_h),
            WeightRule::Truncated => truncated_weights(values, self.eps_h),
            WeightRule::Trimmed => trimmed_weights(values, self.eps_h),
            WeightRule::MedianOfMeans => median_of_means_weights(values, self.mom_groups),
        }
    }
}

/// Weight vector with its support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustWeights {
    weights: Vec<f64>,
    selected: Vec<usize>,
}

impl RobustWeights {
    /// Equal weight `1/|selected|` on `selected`, zero elsewhere.
    pub fn equal_on(m: usize, mut selected: Vec<usize>) -> Self {
        selected.sort_unstable();
        let w = 1.0 / selected.len() as f64;
        let mut weights = vec![0.0; m];
        for &j in &selected {
            weights[j] = w;
        }
        Self { weights, selected }
    }

    pub fn uniform(m: usize) -> Self {
        Self::equal_on(m, (0..m).collect())
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Indices with nonzero weight, ascending.
    pub fn selected(&self) -> &[usize] {
        &self.selected
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// `sum_j w_j values_j`.
    pub fn weighted_mean(&self, values: &[f64]) -> f64 {
        self.selected
            .iter()
            .map(|&j| self.weights[j] * values[j])
            .sum()
    }
}

/// Number of values removed for budget `eps_h` over `m` inputs.
///
/// The small slack absorbs representation error in products such as
/// `0.29 * 100`, which would otherwise floor one short.
pub fn removal_count(eps_h: f64, m: usize) -> usize {
    (eps_h * m as f64 + 1e-9).floor() as usize
}

fn check_values(values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::arg("robust weighting needs at least one value"));
    }
    if let Some(j) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::arg(format!("value {j} is not finite")));
    }
    Ok(())
}

fn check_eps(eps_h: f64) -> Result<()> {
    if !(eps_h.is_finite() && (0.0..0.5).contains(&eps_h)) {
        return Err(Error::arg(format!(
            "eps_h must lie in [0, 0.5), got {eps_h}"
        )));
    }
    Ok(())
}

/// Indices sorted by `(value, index)`.
fn sorted_order(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]).then(i.cmp(&j)));
    order
}

/// Population variance (divide by the count) of a slice, two-pass.
fn window_variance(sorted: &[f64]) -> f64 {
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    sorted.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

/// Minimum weighted variance: the size-`s` subset of smallest variance.
///
/// The minimizer is always a run of consecutive order statistics, so only the
/// `m - s + 1` windows of the sorted values are scanned. Ties go to the window
/// with the smallest starting rank.
pub fn mwv_weights(values: &[f64], eps_h: f64) -> Result<RobustWeights> {
    check_values(values)?;
    check_eps(eps_h)?;
    let m = values.len();
    let s = m - removal_count(eps_h, m);
    if s < 1 {
        return Err(Error::arg("minimum-variance subset would be empty"));
    }
    if s == m {
        return Ok(RobustWeights::uniform(m));
    }
    let order = sorted_order(values);
    let sorted: Vec<f64> = order.iter().map(|&j| values[j]).collect();
    let mut best_start = 0;
    let mut best_var = f64::INFINITY;
    for start in 0..=m - s {
        let var = window_variance(&sorted[start..start + s]);
        if var < best_var {
            best_var = var;
            best_start = start;
        }
    }
    Ok(RobustWeights::equal_on(
        m,
        order[best_start..best_start + s].to_vec(),
    ))
}

/// Truncated mean weights: ranks `g+1 ..= m-g` with `g = floor(eps_h m)`.
pub fn truncated_weights(values: &[f64], eps_h: f64) -> Result<RobustWeights> {
    check_values(values)?;
    check_eps(eps_h)?;
    let m = values.len();
    let g = removal_count(eps_h, m);
    if m < 2 * g + 1 {
        return Err(Error::arg(format!(
            "truncating {g} values from each tail of {m} leaves nothing"
        )));
    }
    let order = sorted_order(values);
    Ok(RobustWeights::equal_on(m, order[g..m - g].to_vec()))
}

/// Least-trimmed weights: the `m - floor(eps_h m)` smallest values.
pub fn trimmed_weights(values: &[f64], eps_h: f64) -> Result<RobustWeights> {
    check_values(values)?;
    check_eps(eps_h)?;
    let m = values.len();
    let s = m - removal_count(eps_h, m);
    if s < 1 {
        return Err(Error::arg("trimmed subset would be empty"));
    }
    let order = sorted_order(values);
    Ok(RobustWeights::equal_on(m, order[..s].to_vec()))
}

/// Median-of-means weights over `groups` contiguous blocks of the original
/// index order. With `m` not divisible by `groups` the last block absorbs the
/// remainder. The median block's members share weight `1/|block|`, which is
/// `groups/m` when the blocks are even.
pub fn median_of_means_weights(values: &[f64], groups: usize) -> Result<RobustWeights> {
    check_values(values)?;
    let m = values.len();
    if groups == 0 || groups.is_multiple_of(2) {
        return Err(Error::arg(format!(
            "median-of-means needs an odd group count, got {groups}"
        )));
    }
    if groups > m {
        return Err(Error::arg(format!(
            "{groups} groups requested for {m} values"
        )));
    }
    let size = m / groups;
    let bounds: Vec<(usize, usize)> = (0..groups)
        .map(|l| {
            let start = l * size;
            let end = if l + 1 == groups { m } else { start + size };
            (start, end)
        })
        .collect();
    let means: Vec<f64> = bounds
        .iter()
        .map(|&(a, b)| values[a..b].iter().sum::<f64>() / (b - a) as f64)
        .collect();
    let order = sorted_order(&means);
    let (a, b) = bounds[order[groups / 2]];
    Ok(RobustWeights::equal_on(m, (a..b).collect()))
}

/// Weighted mean under the configured rule.
pub fn robust_mean(values: &[f64], cfg: &WeightingConfig) -> Result<f64> {
    Ok(cfg.weights(values)?.weighted_mean(values))
}
