//! Synthetic label-shift sources and contamination schemes.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{LabeledDataset, UnlabeledDataset};
use crate::error::{Error, Result};
use crate::simplex::SimplexVector;

/// Minimum per-class count a generated source must reach; the within-class
/// kernel U-statistic needs two points.
pub const MIN_CLASS_COUNT: usize = 2;
const MAX_ATTEMPTS: usize = 100;

/// How each source's label distribution `p_j` is drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceLaw {
    /// `p_j = (u, 1 - u)` with `u ~ U[0, 1]`; two classes only.
    UniformBinary,
    /// Source `j` uses entry `j mod len`.
    Fixed(Vec<SimplexVector>),
    /// Symmetric Dirichlet with the given concentration.
    Dirichlet(f64),
}

/// Shared class-conditional Gaussians with isotropic scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSpec {
    pub class_means: Vec<Vec<f64>>,
    pub class_scales: Vec<f64>,
    pub target_proportions: SimplexVector,
    pub source_law: SourceLaw,
}

impl Default for MixtureSpec {
    /// Two 1-D classes `N(0, 1)` and `N(4, 1)`, target proportions
    /// `(0.6, 0.4)`, source proportions uniform on `[0, 1]`.
    fn default() -> Self {
        Self {
            class_means: vec![vec![0.0], vec![4.0]],
            class_scales: vec![1.0, 1.0],
            target_proportions: SimplexVector::new(vec![0.6, 0.4]).expect("valid"),
            source_law: SourceLaw::UniformBinary,
        }
    }
}

impl MixtureSpec {
    pub fn num_classes(&self) -> usize {
        self.class_means.len()
    }

    pub fn dim(&self) -> usize {
        self.class_means.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.num_classes();
        let d = self.dim();
        if k == 0 || d == 0 {
            return Err(Error::Config(
                "mixture needs at least one class and one dimension".into(),
            ));
        }
        if self
            .class_means
            .iter()
            .any(|m| m.len() != d || m.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::Config(
                "class means must share one dimension and be finite".into(),
            ));
        }
        if self.class_scales.len() != k
            || self
                .class_scales
                .iter()
                .any(|s| !(s.is_finite() && *s > 0.0))
        {
            return Err(Error::Config(format!("need {k} positive class scales")));
        }
        if self.target_proportions.len() != k {
            return Err(Error::Config(
                "target proportions do not match the class count".into(),
            ));
        }
        match &self.source_law {
            SourceLaw::UniformBinary if k != 2 => Err(Error::Config(
                "uniform_binary source law needs exactly two classes".into(),
            )),
            SourceLaw::Fixed(list) if list.is_empty() || list.iter().any(|p| p.len() != k) => Err(
                Error::Config(format!("fixed source law needs vectors of length {k}")),
            ),
            SourceLaw::Dirichlet(a) if !(a.is_finite() && *a > 0.0) => Err(Error::Config(
                "Dirichlet concentration must be positive".into(),
            )),
            _ => Ok(()),
        }
    }

    fn draw_covariate<R: Rng + ?Sized>(&self, class: usize, rng: &mut R, out: &mut Vec<f64>) {
        let scale = self.class_scales[class];
        for &mu in &self.class_means[class] {
            let z: f64 = StandardNormal.sample(rng);
            out.push(mu + scale * z);
        }
    }

    fn draw_source_law<R: Rng + ?Sized>(&self, j: usize, rng: &mut R) -> Vec<f64> {
        match &self.source_law {
            SourceLaw::UniformBinary => {
                let u: f64 = rng.random();
                vec![u, 1.0 - u]
            }
            SourceLaw::Fixed(list) => list[j % list.len()].as_slice().to_vec(),
            SourceLaw::Dirichlet(alpha) => {
                let gamma = Gamma::new(*alpha, 1.0).expect("validated concentration");
                let draws: Vec<f64> = (0..self.num_classes()).map(|_| gamma.sample(rng)).collect();
                let total: f64 = draws.iter().sum();
                draws.into_iter().map(|g| g / total).collect()
            }
        }
    }
}

fn draw_class<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    // u landed in the rounding gap above the cumulative sum
    probs
        .iter()
        .rposition(|&p| p > 0.0)
        .unwrap_or(probs.len() - 1)
}

/// Labeled sources plus the indices of contaminated (outlier) sources.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceCollection {
    pub sources: Vec<LabeledDataset>,
    pub outliers: Vec<usize>,
}

impl SourceCollection {
    pub fn clean(sources: Vec<LabeledDataset>) -> Self {
        Self {
            sources,
            outliers: Vec::new(),
        }
    }

    pub fn inliers(&self) -> Vec<usize> {
        (0..self.sources.len())
            .filter(|j| self.outliers.binary_search(j).is_err())
            .collect()
    }
}

/// Output of [`generate_sources`].
#[derive(Debug, Clone)]
pub struct GeneratedData {
    pub sources: SourceCollection,
    pub target: UnlabeledDataset,
    /// Held back for scoring only.
    pub target_labels: Vec<usize>,
}

/// Draws `m` labeled sources of size `n` and `big_n` unlabeled target points.
///
/// All domains share the class-conditional generators, so every source obeys
/// label shift with respect to the target. A source with a class below
/// [`MIN_CLASS_COUNT`] samples is redrawn (proportions included), at most
/// 100 times.
pub fn generate_sources<R: Rng + ?Sized>(
    spec: &MixtureSpec,
    m: usize,
    n: usize,
    big_n: usize,
    rng: &mut R,
) -> Result<GeneratedData> {
    spec.validate()?;
    if m == 0 || n == 0 || big_n == 0 {
        return Err(Error::arg("m, n and N must be positive"));
    }
    let k = spec.num_classes();
    let d = spec.dim();
    if n < k * MIN_CLASS_COUNT {
        return Err(Error::arg(format!(
            "n = {n} cannot hold {MIN_CLASS_COUNT} samples for each of {k} classes"
        )));
    }

    let mut target_cov = Vec::with_capacity(big_n * d);
    let mut target_labels = Vec::with_capacity(big_n);
    for _ in 0..big_n {
        let y = draw_class(spec.target_proportions.as_slice(), rng);
        spec.draw_covariate(y, rng, &mut target_cov);
        target_labels.push(y);
    }
    let target = UnlabeledDataset::new(target_cov, d)?;

    let mut sources = Vec::with_capacity(m);
    for j in 0..m {
        let mut accepted = None;
        for _ in 0..MAX_ATTEMPTS {
            let probs = spec.draw_source_law(j, rng);
            let labels: Vec<usize> = (0..n).map(|_| draw_class(&probs, rng)).collect();
            let mut counts = vec![0usize; k];
            labels.iter().for_each(|&y| counts[y] += 1);
            if counts.iter().all(|&c| c >= MIN_CLASS_COUNT) {
                accepted = Some(labels);
                break;
            }
        }
        let labels = accepted.ok_or_else(|| {
            Error::Generation(format!(
                "source {j} missed a class in {MAX_ATTEMPTS} attempts"
            ))
        })?;
        let mut cov = Vec::with_capacity(n * d);
        for &y in &labels {
            spec.draw_covariate(y, rng, &mut cov);
        }
        sources.push(LabeledDataset::new(cov, labels, d, k)?);
    }
    Ok(GeneratedData {
        sources: SourceCollection::clean(sources),
        target,
        target_labels,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case", deny_unknown_fields)]
pub enum ContaminationScheme {
    /// Flip `ceil(rate_coef / sqrt(n) * n_larger)` labels of the larger class
    /// to the next class (ties between classes go to the smaller index).
    FlipLargest {
        #[serde(default = "default_rate_coef")]
        rate_coef: f64,
    },
    /// Every label `k` becomes `k + 1`, wrapping the last class to the first.
    CyclicShift,
    /// A fraction (rounded half up) of each listed class moves to the next
    /// class. Classes are 0-based indices.
    PartialShift { classes: Vec<usize>, fraction: f64 },
}

/// Flip fraction `0.5 / sqrt(n)`, i.e. 0.05 of the larger class at `n = 100`.
pub const DEFAULT_FLIP_COEF: f64 = 0.5;

fn default_rate_coef() -> f64 {
    DEFAULT_FLIP_COEF
}

impl Default for ContaminationScheme {
    fn default() -> Self {
        ContaminationScheme::FlipLargest {
            rate_coef: default_rate_coef(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContaminationPlan {
    pub eps: f64,
    pub scheme: ContaminationScheme,
}

impl ContaminationPlan {
    pub fn new(eps: f64, scheme: ContaminationScheme) -> Result<Self> {
        if !(eps.is_finite() && (0.0..0.5).contains(&eps)) {
            return Err(Error::arg(format!(
                "contamination eps must lie in [0, 0.5), got {eps}"
            )));
        }
        if let ContaminationScheme::PartialShift { fraction, .. } = &scheme {
            if !(0.0..=1.0).contains(fraction) {
                return Err(Error::arg("partial shift fraction must lie in [0, 1]"));
            }
        }
        if let ContaminationScheme::FlipLargest { rate_coef } = &scheme {
            if !(rate_coef.is_finite() && *rate_coef >= 0.0) {
                return Err(Error::arg("flip rate coefficient must be nonnegative"));
            }
        }
        Ok(Self { eps, scheme })
    }

    /// `floor(eps * m)`.
    pub fn outlier_count(&self, m: usize) -> usize {
        crate::weighting::removal_count(self.eps, m)
    }
}

/// Selects `floor(eps m)` sources uniformly at random and corrupts their
/// labels. Covariates are never modified.
pub fn contaminate<R: Rng + ?Sized>(
    sources: &SourceCollection,
    plan: &ContaminationPlan,
    rng: &mut R,
) -> Result<SourceCollection> {
    let m = sources.sources.len();
    let count = plan.outlier_count(m);
    if count == 0 {
        return Ok(sources.clone());
    }
    let mut outliers = sample(rng, m, count).into_vec();
    outliers.sort_unstable();
    let mut out = sources.sources.clone();
    for &j in &outliers {
        let labels = corrupt_labels(&out[j], &plan.scheme, rng)?;
        out[j] = out[j].with_labels(labels)?;
    }
    let mut all: Vec<usize> = sources.outliers.iter().chain(&outliers).copied().collect();
    all.sort_unstable();
    all.dedup();
    Ok(SourceCollection {
        sources: out,
        outliers: all,
    })
}

fn corrupt_labels<R: Rng + ?Sized>(
    source: &LabeledDataset,
    scheme: &ContaminationScheme,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let k = source.num_classes();
    let mut labels = source.labels().to_vec();
    match scheme {
        ContaminationScheme::FlipLargest { rate_coef } => {
            let counts = source.class_counts();
            let larger = (0..k).fold(0, |best, c| if counts[c] > counts[best] { c } else { best });
            let n_larger = counts[larger];
            let rate = rate_coef / (source.n_rows() as f64).sqrt();
            let n_flip = flip_count(rate, n_larger);
            if n_flip > n_larger {
                return Err(Error::Contamination(format!(
                    "cannot flip {n_flip} labels of a class with {n_larger} samples"
                )));
            }
            let rows = source.class_rows(larger);
            for pick in sample(rng, n_larger, n_flip) {
                labels[rows[pick]] = (larger + 1) % k;
            }
        }
        ContaminationScheme::CyclicShift => {
            labels.iter_mut().for_each(|y| *y = (*y + 1) % k);
        }
        ContaminationScheme::PartialShift { classes, fraction } => {
            for &c in classes {
                if c + 1 >= k {
                    return Err(Error::Contamination(format!(
                        "class {} has no class to its right among {k}",
                        c + 1
                    )));
                }
            }
            let mut moves = Vec::new();
            for &c in classes {
                let rows = source.class_rows(c);
                let count = (fraction * rows.len() as f64 + 0.5).floor() as usize;
                let count = count.min(rows.len());
                moves.extend(
                    sample(rng, rows.len(), count)
                        .into_iter()
                        .map(|p| (rows[p], c + 1)),
                );
            }
            for (row, to) in moves {
                labels[row] = to;
            }
        }
    }
    Ok(labels)
}

/// `ceil(rate * n_larger)`, ignoring representation noise below 1e-9.
pub fn flip_count(rate: f64, n_larger: usize) -> usize {
    (rate * n_larger as f64 - 1e-9).ceil().max(0.0) as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, StreamRole};

    fn rng(seed: u64) -> rand_chacha::ChaCha20Rng {
        stream_rng(seed, 0, 0, StreamRole::Generate)
    }

    fn data(m: usize, n: usize, seed: u64) -> GeneratedData {
        generate_sources(&MixtureSpec::default(), m, n, 50, &mut rng(seed)).unwrap()
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let a = data(3, 40, 9);
        let b = data(3, 40, 9);
        assert_eq!(a.sources, b.sources);
        assert_eq!(a.target, b.target);
        assert_eq!(a.target_labels, b.target_labels);
    }

    #[test]
    fn every_source_has_each_class_twice() {
        let d = data(50, 10, 3);
        for s in &d.sources.sources {
            assert!(s.class_counts().iter().all(|&c| c >= MIN_CLASS_COUNT));
        }
    }

    #[test]
    fn zero_eps_leaves_sources_untouched() {
        let d = data(5, 30, 1);
        let plan = ContaminationPlan::new(0.0, ContaminationScheme::default()).unwrap();
        let out = contaminate(&d.sources, &plan, &mut rng(2)).unwrap();
        assert_eq!(out, d.sources);
    }

    fn seventy_thirty(scheme: ContaminationScheme) -> (SourceCollection, SourceCollection) {
        let labels: Vec<usize> = (0..100).map(|i| usize::from(i >= 70)).collect();
        let src = LabeledDataset::new((0..100).map(f64::from).collect(), labels, 1, 2).unwrap();
        let coll = SourceCollection::clean(vec![src.clone(), src.clone(), src.clone(), src]);
        let plan = ContaminationPlan::new(0.25, scheme).unwrap();
        let out = contaminate(&coll, &plan, &mut rng(5)).unwrap();
        (coll, out)
    }

    #[test]
    fn flip_largest_default_at_n_100() {
        // 0.05 of the 70 larger-class labels, rounded up
        let (coll, out) = seventy_thirty(ContaminationScheme::default());
        assert_eq!(out.outliers.len(), 1);
        let bad = &out.sources[out.outliers[0]];
        assert_eq!(bad.class_counts(), vec![66, 34]);
        assert_eq!(bad.covariates(), coll.sources[0].covariates());
        let inlier = (0..4).find(|j| !out.outliers.contains(j)).unwrap();
        assert_eq!(out.sources[inlier], coll.sources[inlier]);
    }

    #[test]
    fn flip_largest_custom_rate() {
        // 5 / sqrt(100) = 0.5 of the larger class
        let (_, out) = seventy_thirty(ContaminationScheme::FlipLargest { rate_coef: 5.0 });
        assert_eq!(out.sources[out.outliers[0]].class_counts(), vec![35, 65]);
    }

    #[test]
    fn flip_ties_go_to_smaller_class() {
        let labels: Vec<usize> = (0..100).map(|i| usize::from(i >= 50)).collect();
        let src = LabeledDataset::new(vec![0.0; 100], labels, 1, 2).unwrap();
        let coll = SourceCollection::clean(vec![src.clone(), src.clone(), src]);
        let plan = ContaminationPlan::new(0.34, ContaminationScheme::default()).unwrap();
        let out = contaminate(&coll, &plan, &mut rng(8)).unwrap();
        assert_eq!(out.sources[out.outliers[0]].class_counts(), vec![47, 53]);
    }

    #[test]
    fn flip_count_rounds_up() {
        assert_eq!(flip_count(0.5, 61), 31);
        assert_eq!(flip_count(0.1, 30), 3);
        assert_eq!(flip_count(0.01, 1), 1);
    }

    #[test]
    fn flip_exceeding_class_size_errors() {
        let labels = vec![0, 0, 0, 1, 1];
        let src = LabeledDataset::new(vec![0.0; 5], labels, 1, 2).unwrap();
        let coll = SourceCollection::clean(vec![src.clone(), src.clone(), src]);
        // 5 / sqrt(5) > 1
        let plan =
            ContaminationPlan::new(0.34, ContaminationScheme::FlipLargest { rate_coef: 5.0 })
                .unwrap();
        assert!(contaminate(&coll, &plan, &mut rng(1)).is_err());
    }

    #[test]
    fn cyclic_shift_rotates_labels() {
        let labels = vec![0, 1, 1, 2, 2, 2, 3, 3, 3, 3];
        let src = LabeledDataset::new(vec![0.0; 10], labels, 1, 4).unwrap();
        let coll = SourceCollection::clean(vec![src.clone(), src.clone(), src]);
        let plan = ContaminationPlan::new(0.34, ContaminationScheme::CyclicShift).unwrap();
        let out = contaminate(&coll, &plan, &mut rng(1)).unwrap();
        let bad = &out.sources[out.outliers[0]];
        assert_eq!(bad.class_counts(), vec![4, 1, 2, 3]);
    }

    #[test]
    fn partial_shift_moves_half() {
        let labels = vec![0, 0, 0, 0, 1, 1, 1, 2, 2, 2];
        let src = LabeledDataset::new(vec![0.0; 10], labels, 1, 3).unwrap();
        let coll = SourceCollection::clean(vec![src.clone(), src.clone(), src]);
        let scheme = ContaminationScheme::PartialShift {
            classes: vec![0, 1],
            fraction: 0.5,
        };
        let plan = ContaminationPlan::new(0.34, scheme).unwrap();
        let out = contaminate(&coll, &plan, &mut rng(3)).unwrap();
        let bad = &out.sources[out.outliers[0]];
        // class 0: 2 of 4 move right; class 1: round(1.5) = 2 of 3 move right
        assert_eq!(bad.class_counts(), vec![2, 3, 5]);
    }

    #[test]
    fn partial_shift_rejects_last_class() {
        let src = LabeledDataset::new(vec![0.0; 4], vec![0, 1, 0, 1], 1, 2).unwrap();
        let coll = SourceCollection::clean(vec![src.clone(), src.clone(), src]);
        let scheme = ContaminationScheme::PartialShift {
            classes: vec![1],
            fraction: 0.5,
        };
        let plan = ContaminationPlan::new(0.34, scheme).unwrap();
        assert!(contaminate(&coll, &plan, &mut rng(3)).is_err());
    }

    #[test]
    fn mixture_validation() {
        let spec = MixtureSpec {
            class_scales: vec![1.0, 0.0],
            ..MixtureSpec::default()
        };
        assert!(spec.validate().is_err());
        let mut spec = MixtureSpec::default();
        spec.class_means.push(vec![8.0]);
        assert!(spec.validate().is_err());
    }

    #[test]
    fn dirichlet_law_generates() {
        let spec = MixtureSpec {
            class_means: vec![vec![0.0, 0.0], vec![3.0, 0.0], vec![0.0, 3.0]],
            class_scales: vec![1.0; 3],
            target_proportions: SimplexVector::uniform(3),
            source_law: SourceLaw::Dirichlet(5.0),
        };
        let d = generate_sources(&spec, 4, 60, 30, &mut rng(4)).unwrap();
        assert_eq!(d.sources.sources[0].dim(), 2);
        assert_eq!(d.target.n_rows(), 30);
    }
}
