//! Brier score: mean squared error between a predicted probability vector
//! and the one-hot encoded human response.

use super::{MetricError, ResponseDistribution};

/// Brier score of one prediction, averaged over the options.
pub fn brier(dist: &ResponseDistribution, truth_index: usize) -> Result<f64, MetricError> {
    if truth_index >= dist.len() {
        return Err(MetricError::TruthOutOfRange(truth_index));
    }
    let n = dist.len() as f64;
    let sum: f64 = dist
        .values()
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let target = if i == truth_index { 1.0 } else { 0.0 };
            (p - target) * (p - target)
        })
        .sum();
    Ok(sum / n)
}

/// Mean Brier score over respondents; `None` when no prediction carries a
/// distribution.
pub fn mean_brier(pairs: &[(ResponseDistribution, usize)]) -> Option<f64> {
    if pairs.is_empty() {
        return None;
    }
    let mut sum = 0.0;
    for (dist, truth_index) in pairs {
        sum += brier(dist, *truth_index).ok()?;
    }
    Some(sum / pairs.len() as f64)
}
