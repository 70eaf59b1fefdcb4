//! Gaussian kernel and the unbiased empirical MMD quadratic form.
//!
//! For a labeled source `D_j` split into classes `D_{j,k}` and the unlabeled
//! target sample `D_0`, the q-dependent part of the squared MMD between the
//! target marginal and the mixture `sum_k q_k P_{j,X|Y=k}` is estimated by
//!
//! ```text
//!     L_j(q) = q' A_j q - 2 q' b_j
//! ```
//!
//! where the diagonal of `A_j` is a U-statistic over distinct pairs inside a
//! class, the off-diagonal entries average all cross-class pairs, and `b_j`
//! averages kernel values between each class and the target sample.

use rayon::prelude::*;

use crate::dataset::{LabeledDataset, UnlabeledDataset};
use crate::error::{Error, Result};
use crate::numeric::{compensated_sum, CompensatedSum};

/// Subsample cap for the median-heuristic bandwidth.
pub const MEDIAN_HEURISTIC_MAX_POINTS: usize = 4096;

/// Rows handled per block when summing kernel values. Keeps the reduction
/// order fixed regardless of how blocks are scheduled on threads.
const ROW_BLOCK: usize = 64;
const INNER_BLOCK: usize = 128;
const LANES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelFamily {
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    family: KernelFamily,
    bandwidth: f64,
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self {
            family: KernelFamily::Gaussian,
            bandwidth: 1.0,
        }
    }
}

impl KernelSpec {
    pub fn gaussian(bandwidth: f64) -> Result<Self> {
        if !(bandwidth.is_finite() && bandwidth > 0.0) {
            return Err(Error::arg(format!(
                "kernel bandwidth must be positive and finite, got {bandwidth}"
            )));
        }
        Ok(Self {
            family: KernelFamily::Gaussian,
            bandwidth,
        })
    }

    /// Gaussian kernel whose squared bandwidth is the median pairwise squared
    /// distance of an evenly strided subsample of the pooled covariates.
    pub fn median_heuristic<'a, I>(samples: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a [f64], usize)>,
    {
        let mut pooled: Vec<&[f64]> = Vec::new();
        let mut dim = None;
        for (covariates, d) in samples {
            if *dim.get_or_insert(d) != d {
                return Err(Error::arg("pooled samples disagree on dimension"));
            }
            pooled.extend(covariates.chunks_exact(d));
        }
        if pooled.len() < 2 {
            return Err(Error::arg("median heuristic needs at least two points"));
        }
        let stride = pooled.len().div_ceil(MEDIAN_HEURISTIC_MAX_POINTS);
        let sub: Vec<&[f64]> = pooled.iter().step_by(stride).copied().collect();
        let mut dists = Vec::with_capacity(sub.len() * (sub.len() - 1) / 2);
        for i in 0..sub.len() {
            for j in i + 1..sub.len() {
                dists.push(squared_distance(sub[i], sub[j]));
            }
        }
        let mid = dists.len() / 2;
        let (_, median, _) = dists.select_nth_unstable_by(mid, f64::total_cmp);
        let median = *median;
        if median <= 0.0 {
            return Err(Error::arg(
                "median pairwise distance is zero; bandwidth cannot be inferred",
            ));
        }
        Self::gaussian(median.sqrt())
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    /// Supremum of the kernel.
    pub fn bound(&self) -> f64 {
        match self.family {
            KernelFamily::Gaussian => 1.0,
        }
    }

    pub fn eval(&self, x1: &[f64], x2: &[f64]) -> Result<f64> {
        if x1.len() != x2.len() {
            return Err(Error::arg(format!(
                "kernel arguments have dimensions {} and {}",
                x1.len(),
                x2.len()
            )));
        }
        Ok(self.eval_unchecked(x1, x2))
    }

    #[inline]
    fn eval_unchecked(&self, x1: &[f64], x2: &[f64]) -> f64 {
        let scale = -0.5 / (self.bandwidth * self.bandwidth);
        (squared_distance(x1, x2) * scale).exp()
    }
}

/// `exp(-||x1 - x2||^2 / (2 sigma^2))` for the Gaussian family.
pub fn kernel_eval(spec: &KernelSpec, x1: &[f64], x2: &[f64]) -> Result<f64> {
    spec.eval(x1, x2)
}

#[inline]
fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Per-source quadratic form `L_j(q) = q' A q - 2 q' b`.
#[derive(Debug, Clone, PartialEq)]
pub struct MmdQuadratic {
    a: Vec<f64>,
    b: Vec<f64>,
    n_per_class: Vec<usize>,
}

impl MmdQuadratic {
    /// Assembles a quadratic form from an explicit row-major `A` and `b`.
    /// `A` must be exactly symmetric.
    pub fn from_parts(a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        let k = b.len();
        if k == 0 || a.len() != k * k {
            return Err(Error::arg(format!(
                "A has {} entries but b has {k}",
                a.len()
            )));
        }
        if a.iter().chain(&b).any(|v| !v.is_finite()) {
            return Err(Error::arg("non-finite entry in A or b"));
        }
        for i in 0..k {
            for j in i + 1..k {
                if a[i * k + j] != a[j * k + i] {
                    return Err(Error::arg(format!("A is not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self {
            a,
            b,
            n_per_class: Vec::new(),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.b.len()
    }

    pub fn a(&self, k: usize, l: usize) -> f64 {
        self.a[k * self.b.len() + l]
    }

    pub fn a_matrix(&self) -> &[f64] {
        &self.a
    }

    pub fn b_vector(&self) -> &[f64] {
        &self.b
    }

    /// Class sizes the estimate was built from (empty for hand-built forms).
    pub fn n_per_class(&self) -> &[usize] {
        &self.n_per_class
    }

    fn check_dim(&self, q: &[f64]) -> Result<()> {
        if q.len() != self.b.len() {
            return Err(Error::arg(format!(
                "vector has length {} but the quadratic form has {} classes",
                q.len(),
                self.b.len()
            )));
        }
        Ok(())
    }

    /// `q' A q - 2 q' b`. Accepts any K-vector so it can be probed off the
    /// simplex.
    pub fn loss(&self, q: &[f64]) -> Result<f64> {
        self.check_dim(q)?;
        Ok(self.loss_unchecked(q))
    }

    pub(crate) fn loss_unchecked(&self, q: &[f64]) -> f64 {
        let k = self.b.len();
        let mut quad = 0.0;
        for (i, qi) in q.iter().enumerate() {
            let row = &self.a[i * k..(i + 1) * k];
            quad += qi * row.iter().zip(q).map(|(a, qj)| a * qj).sum::<f64>();
        }
        let lin: f64 = q.iter().zip(&self.b).map(|(qi, bi)| qi * bi).sum();
        quad - 2.0 * lin
    }

    /// `2 A q - 2 b`.
    pub fn gradient(&self, q: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(q)?;
        let mut g = vec![0.0; q.len()];
        self.accumulate_gradient(q, 1.0, &mut g);
        Ok(g)
    }

    /// Adds `weight * (2 A q - 2 b)` into `out`.
    pub(crate) fn accumulate_gradient(&self, q: &[f64], weight: f64, out: &mut [f64]) {
        let k = self.b.len();
        for ((row, b), o) in self.a.chunks_exact(k).zip(&self.b).zip(out.iter_mut()) {
            let aq: f64 = row.iter().zip(q).map(|(a, qj)| a * qj).sum();
            *o += weight * 2.0 * (aq - b);
        }
    }

    /// Power-method estimate of the spectral norm of `A`.
    pub fn spectral_norm_estimate(&self, iterations: usize) -> f64 {
        let k = self.b.len();
        let mut v = vec![1.0 / (k as f64).sqrt(); k];
        let mut norm = 0.0;
        for _ in 0..iterations.max(1) {
            let w: Vec<f64> = (0..k)
                .map(|i| {
                    self.a[i * k..(i + 1) * k]
                        .iter()
                        .zip(&v)
                        .map(|(a, x)| a * x)
                        .sum()
                })
                .collect();
            norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return 0.0;
            }
            v = w.into_iter().map(|x| x / norm).collect();
        }
        norm
    }
}

/// `L_j(q)`.
pub fn mmd_loss(quad: &MmdQuadratic, q: &[f64]) -> Result<f64> {
    quad.loss(q)
}

/// `grad L_j(q)`.
pub fn mmd_gradient(quad: &MmdQuadratic, q: &[f64]) -> Result<Vec<f64>> {
    quad.gradient(q)
}

/// Builds the unbiased empirical quadratic form for one source.
///
/// Every class must have at least two samples, otherwise the within-class
/// U-statistic is undefined.
pub fn fit_mmd_terms(
    source: &LabeledDataset,
    target: &UnlabeledDataset,
    spec: &KernelSpec,
) -> Result<MmdQuadratic> {
    if source.dim() != target.dim() {
        return Err(Error::arg(format!(
            "source dimension {} differs from target dimension {}",
            source.dim(),
            target.dim()
        )));
    }
    source.require_class_counts(2)?;
    let k = source.num_classes();
    let dim = source.dim();
    let classes: Vec<Vec<f64>> = (0..k).map(|c| source.class_covariates(c)).collect();
    let counts = source.class_counts();

    let mut a = vec![0.0; k * k];
    for c in 0..k {
        let n = counts[c] as f64;
        let pair_sum = within_pair_sum(spec, &classes[c], dim);
        a[c * k + c] = 2.0 * pair_sum / (n * (n - 1.0));
        for l in c + 1..k {
            let cross = cross_sum(spec, &classes[c], &classes[l], dim);
            let v = cross / (n * counts[l] as f64);
            a[c * k + l] = v;
            a[l * k + c] = v;
        }
    }
    let n_target = target.n_rows() as f64;
    let b = (0..k)
        .map(|c| {
            cross_sum(spec, &classes[c], target.covariates(), dim) / (counts[c] as f64 * n_target)
        })
        .collect();

    Ok(MmdQuadratic {
        a,
        b,
        n_per_class: counts,
    })
}

/// Sum of kernel values over unordered distinct pairs of rows of `x`.
fn within_pair_sum(spec: &KernelSpec, x: &[f64], dim: usize) -> f64 {
    let rows = x.len() / dim;
    let blocks: Vec<f64> = (0..rows.div_ceil(ROW_BLOCK))
        .into_par_iter()
        .map(|blk| {
            let start = blk * ROW_BLOCK;
            let end = (start + ROW_BLOCK).min(rows);
            compensated_sum((start..end).map(|i| {
                let xi = &x[i * dim..(i + 1) * dim];
                row_sum(spec, xi, &x[(i + 1) * dim..], dim)
            }))
        })
        .collect();
    compensated_sum(blocks)
}

/// Sum of kernel values over all pairs `(row of x, row of y)`.
fn cross_sum(spec: &KernelSpec, x: &[f64], y: &[f64], dim: usize) -> f64 {
    let rows = x.len() / dim;
    let blocks: Vec<f64> = (0..rows.div_ceil(ROW_BLOCK))
        .into_par_iter()
        .map(|blk| {
            let start = blk * ROW_BLOCK;
            let end = (start + ROW_BLOCK).min(rows);
            compensated_sum((start..end).map(|i| {
                let xi = &x[i * dim..(i + 1) * dim];
                row_sum(spec, xi, y, dim)
            }))
        })
        .collect();
    compensated_sum(blocks)
}

/// Kernel sum of one point against all rows of `others`; short plain partial
/// sums are combined with compensation.
#[inline]
fn row_sum(spec: &KernelSpec, xi: &[f64], others: &[f64], dim: usize) -> f64 {
    let scale = -0.5 / (spec.bandwidth * spec.bandwidth);
    if dim == 1 {
        #[cfg(target_arch = "x86_64")]
        {
            if std::arch::is_x86_feature_detected!("avx512f") {
                // SAFETY: the required CPU feature was detected at runtime.
                return unsafe { row_sum_1d_avx512(xi[0], others, scale) };
            }
            if std::arch::is_x86_feature_detected!("avx2") {
                // SAFETY: the required CPU feature was detected at runtime.
                return unsafe { row_sum_1d_avx2(xi[0], others, scale) };
            }
        }
        return row_sum_1d(xi[0], others, scale);
    }
    let mut acc = CompensatedSum::new();
    for chunk in others.chunks(INNER_BLOCK * dim) {
        let part: f64 = chunk
            .chunks_exact(dim)
            .map(|y| exp_nonpositive(squared_distance(xi, y) * scale))
            .sum();
        acc.add(part);
    }
    acc.total()
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
unsafe fn row_sum_1d_avx512(x: f64, others: &[f64], scale: f64) -> f64 {
    row_sum_1d(x, others, scale)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn row_sum_1d_avx2(x: f64, others: &[f64], scale: f64) -> f64 {
    row_sum_1d(x, others, scale)
}

/// One-dimensional specialization. The arithmetic is identical on every code
/// path (no fused multiply-add), so results do not depend on the CPU.
#[inline(always)]
fn row_sum_1d(x: f64, others: &[f64], scale: f64) -> f64 {
    let mut acc = CompensatedSum::new();
    for chunk in others.chunks(INNER_BLOCK) {
        let mut lanes = [0.0f64; LANES];
        let mut groups = chunk.chunks_exact(LANES);
        for group in &mut groups {
            for l in 0..LANES {
                let d = x - group[l];
                lanes[l] += exp_nonpositive(d * d * scale);
            }
        }
        let mut part = lanes.iter().sum::<f64>();
        for &y in groups.remainder() {
            let d = x - y;
            part += exp_nonpositive(d * d * scale);
        }
        acc.add(part);
    }
    acc.total()
}

/// `exp(x)` for `x <= 0`, written so the compiler can vectorize it over a
/// slice. Relative error is within a few ulp of `f64::exp`; arguments below
/// -708 flush to zero instead of producing subnormals.
#[inline(always)]
fn exp_nonpositive(x: f64) -> f64 {
    const LOG2_E: f64 = std::f64::consts::LOG2_E;
    const LN2_HI: f64 = 6.931_471_803_691_238e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    const SHIFT: f64 = 6_755_399_441_055_744.0; // 1.5 * 2^52
    let xc = x.max(-708.0);
    let t = xc * LOG2_E + SHIFT;
    let k = t - SHIFT;
    let r = (xc - k * LN2_HI) - k * LN2_LO;
    // Taylor polynomial of degree 12 on |r| <= ln(2)/2.
    let mut p: f64 = 1.0 / 479_001_600.0;
    p = p * r + 1.0 / 39_916_800.0;
    p = p * r + 1.0 / 3_628_800.0;
    p = p * r + 1.0 / 362_880.0;
    p = p * r + 1.0 / 40_320.0;
    p = p * r + 1.0 / 5_040.0;
    p = p * r + 1.0 / 720.0;
    p = p * r + 1.0 / 120.0;
    p = p * r + 1.0 / 24.0;
    p = p * r + 1.0 / 6.0;
    p = p * r + 0.5;
    p = p * r + 1.0;
    p = p * r + 1.0;
    let scale = f64::from_bits(t.to_bits().wrapping_add(1023) << 52);
    let keep = if x < -708.0 { 0.0 } else { 1.0 };
    p * scale * keep
}
