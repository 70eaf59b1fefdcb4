//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use lsr::dataset::{LabeledDataset, UnlabeledDataset};
use rand::Rng;
use rand_distr::{Distribution, Exp1, Normal};
use statrs::distribution::{ContinuousCDF, Normal as StatNormal};

/// Population variance of the chosen values.
fn subset_variance(values: &[f64], mask: u32) -> f64 {
    let picked: Vec<f64> = (0..values.len())
        .filter(|i| mask >> i & 1 == 1)
        .map(|i| values[i])
        .collect();
    let n = picked.len() as f64;
    let mean = picked.iter().sum::<f64>() / n;
    picked.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

fn subsets(m: usize, s: usize) -> impl Iterator<Item = u32> {
    (0u32..1 << m).filter(move |mask| mask.count_ones() as usize == s)
}

fn mask_to_indices(m: usize, mask: u32) -> Vec<usize> {
    (0..m).filter(|i| mask >> i & 1 == 1).collect()
}

/// Minimum-variance subset of size `s` by enumeration.
pub fn mwv_exhaustive(values: &[f64], s: usize) -> Vec<usize> {
    let m = values.len();
    let best = subsets(m, s)
        .map(|mask| (subset_variance(values, mask), mask))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .expect("nonempty");
    mask_to_indices(m, best.1)
}

/// Minimum-sum subset of size `s` by enumeration.
pub fn min_sum_exhaustive(values: &[f64], s: usize) -> Vec<usize> {
    let m = values.len();
    let best = subsets(m, s)
        .map(|mask| {
            let sum: f64 = mask_to_indices(m, mask).iter().map(|&i| values[i]).sum();
            (sum, mask)
        })
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .expect("nonempty");
    mask_to_indices(m, best.1)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Calls `f` on every point of the simplex grid with spacing `1/steps`.
fn for_each_grid_point(k: usize, steps: usize, f: &mut impl FnMut(&[f64])) {
    fn rec(k: usize, left: usize, steps: usize, cur: &mut Vec<f64>, f: &mut impl FnMut(&[f64])) {
        if cur.len() + 1 == k {
            cur.push(left as f64 / steps as f64);
            f(cur);
            cur.pop();
            return;
        }
        for c in 0..=left {
            cur.push(c as f64 / steps as f64);
            rec(k, left - c, steps, cur, f);
            cur.pop();
        }
    }
    rec(k, steps, steps, &mut Vec::with_capacity(k), f);
}

/// Euclidean projection onto the simplex by grid search followed by
/// exact pairwise mass transfers until no transfer helps.
pub fn project_oracle(v: &[f64]) -> Vec<f64> {
    let k = v.len();
    if k == 1 {
        return vec![1.0];
    }
    let steps = if k <= 3 { 1000 } else { 50 };
    let mut best = vec![0.0; k];
    let mut best_d = f64::INFINITY;
    for_each_grid_point(k, steps, &mut |p| {
        let d = sq_dist(p, v);
        if d < best_d {
            best_d = d;
            best.copy_from_slice(p);
        }
    });
    let mut x = best;
    for _ in 0..100_000 {
        let mut moved = 0.0f64;
        for i in 0..k {
            for j in 0..k {
                if i == j {
                    continue;
                }
                // shift t from j to i, optimal for the pair, kept feasible
                let t = (((v[i] - x[i]) - (v[j] - x[j])) / 2.0).clamp(-x[i], x[j]);
                if t != 0.0 {
                    x[i] += t;
                    x[j] -= t;
                    moved = moved.max(t.abs());
                }
            }
        }
        if moved < 1e-15 {
            break;
        }
    }
    x
}

/// `E exp(-(X - Y)^2 / (2 sigma^2))` for independent normals whose
/// difference has mean `delta` and variance `var`.
pub fn gaussian_kernel_mean(delta: f64, var: f64, sigma: f64) -> f64 {
    let s2 = sigma * sigma;
    (s2 / (s2 + var)).sqrt() * (-delta * delta / (2.0 * (s2 + var))).exp()
}

/// Error of the likelihood-ratio rule for the prior-weighted mixture
/// `p0 N(mu0, 1) + p1 N(mu1, 1)` with `mu0 < mu1`.
pub fn bayes_error_two_gaussians(p0: f64, mu0: f64, p1: f64, mu1: f64) -> f64 {
    let t = (mu0 + mu1) / 2.0 + (p0 / p1).ln() / (mu1 - mu0);
    let z = StatNormal::new(0.0, 1.0).unwrap();
    p0 * (1.0 - z.cdf(t - mu0)) + p1 * z.cdf(t - mu1)
}

/// `q' A q - 2 q' b` by explicit double loop.
pub fn naive_loss(a: &[f64], b: &[f64], q: &[f64]) -> f64 {
    let k = b.len();
    let mut quad = 0.0;
    for i in 0..k {
        for j in 0..k {
            quad += q[i] * a[i * k + j] * q[j];
        }
    }
    let lin: f64 = (0..k).map(|i| q[i] * b[i]).sum();
    quad - 2.0 * lin
}

/// Point uniformly distributed on the simplex.
pub fn random_simplex<R: Rng>(k: usize, rng: &mut R) -> Vec<f64> {
    let draws: Vec<f64> = (0..k).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    draws.iter().map(|d| d / total).collect()
}

/// 1-D source with fixed class counts drawn from `N(means[k], 1)`.
pub fn gaussian_source<R: Rng>(counts: &[usize], means: &[f64], rng: &mut R) -> LabeledDataset {
    let mut cov = Vec::new();
    let mut labels = Vec::new();
    for (k, &c) in counts.iter().enumerate() {
        let dist = Normal::new(means[k], 1.0).unwrap();
        for _ in 0..c {
            cov.push(dist.sample(rng));
            labels.push(k);
        }
    }
    LabeledDataset::new(cov, labels, 1, counts.len()).unwrap()
}

/// 1-D target of `n` points from the mixture `sum_k q[k] N(means[k], 1)`.
pub fn gaussian_target<R: Rng>(
    n: usize,
    q: &[f64],
    means: &[f64],
    rng: &mut R,
) -> UnlabeledDataset {
    let cov = (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut k = q.len() - 1;
            for (i, p) in q.iter().enumerate() {
                acc += p;
                if u < acc {
                    k = i;
                    break;
                }
            }
            Normal::new(means[k], 1.0).unwrap().sample(rng)
        })
        .collect();
    UnlabeledDataset::new(cov, 1).unwrap()
}

pub fn l2(a: &[f64], b: &[f64]) -> f64 {
    sq_dist(a, b).sqrt()
}
