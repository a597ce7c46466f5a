//! Distances between discrete response distributions.

use super::MetricError;

fn check_lengths(p: &[f64], q: &[f64]) -> Result<(), MetricError> {
    if p.is_empty() {
        return Err(MetricError::Empty);
    }
    if p.len() != q.len() {
        return Err(MetricError::LengthMismatch {
            left: p.len(),
            right: q.len(),
        });
    }
    Ok(())
}

/// Total variation distance: half the L1 distance.
pub fn tv_distance(p: &[f64], q: &[f64]) -> Result<f64, MetricError> {
    check_lengths(p, q)?;
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// 1-Wasserstein distance on an ordinal scale with unit spacing between
/// adjacent ranks: the L1 distance between the CDFs.
pub fn wasserstein1(p: &[f64], q: &[f64]) -> Result<f64, MetricError> {
    check_lengths(p, q)?;
    let mut cdf_p = 0.0;
    let mut cdf_q = 0.0;
    let mut total = 0.0;
    for (a, b) in p.iter().zip(q) {
        cdf_p += a;
        cdf_q += b;
        total += (cdf_p - cdf_q).abs();
    }
    Ok(total)
}

/// Jensen-Shannon divergence, base-2 logarithm so the value is bounded by
/// 1; `0 * log 0` is treated as 0.
pub fn jsd(p: &[f64], q: &[f64]) -> Result<f64, MetricError> {
    check_lengths(p, q)?;
    let kl_to_mixture = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .map(|(&x, &y)| {
                if x <= 0.0 {
                    0.0
                } else {
                    let m = 0.5 * (x + y);
                    x * (x / m).log2()
                }
            })
            .sum()
    };
    Ok(0.5 * kl_to_mixture(p, q) + 0.5 * kl_to_mixture(q, p))
}
