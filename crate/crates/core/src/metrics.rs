//! Evaluation metrics.

use crate::error::{Error, Result};

/// Squared Euclidean distance `||q_hat - q_star||^2`.
pub fn mse_metric(q_hat: &[f64], q_star: &[f64]) -> Result<f64> {
    if q_hat.len() != q_star.len() {
        return Err(Error::arg(format!(
            "estimate has {} classes, truth has {}",
            q_hat.len(),
            q_star.len()
        )));
    }
    Ok(q_hat
        .iter()
        .zip(q_star)
        .map(|(a, b)| (a - b) * (a - b))
        .sum())
}

/// False selection number `|S ∩ O|`.
pub fn fsn_metric(selected: &[usize], outliers: &[usize]) -> usize {
    let mut s = selected.to_vec();
    s.sort_unstable();
    s.dedup();
    s.iter().filter(|j| outliers.contains(j)).count()
}

/// Fraction of positions where `predicted` differs from `truth`.
pub fn misclassification_error(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::arg(format!(
            "{} predictions for {} labels",
            predicted.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::arg("no labels to score"));
    }
    let wrong = predicted.iter().zip(truth).filter(|(p, t)| p != t).count();
    Ok(wrong as f64 / truth.len() as f64)
}
