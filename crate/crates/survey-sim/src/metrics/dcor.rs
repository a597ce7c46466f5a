//! Sample distance correlation between paired sets of vectors.
//!
//! Pairwise Euclidean distance matrices are double-centered; the squared
//! distance covariance is the mean of their elementwise product, and the
//! correlation normalizes by the distance variances. Defined as 0 when
//! either variance vanishes.

use super::MetricError;

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Pairwise distance matrix, double-centered: subtract row means, column
/// means, add the grand mean.
fn centered_distances(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = rows.len();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let dist = euclidean(&rows[i], &rows[j]);
            d[i][j] = dist;
            d[j][i] = dist;
        }
    }
    let row_means: Vec<f64> = d
        .iter()
        .map(|row| row.iter().sum::<f64>() / n as f64)
        .collect();
    let grand_mean = row_means.iter().sum::<f64>() / n as f64;
    let mut centered = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            centered[i][j] = d[i][j] - row_means[i] - row_means[j] + grand_mean;
        }
    }
    centered
}

/// Sample distance correlation of paired samples; `x[i]` corresponds to
/// `y[i]`.
pub fn distance_correlation(x: &[Vec<f64>], y: &[Vec<f64>]) -> Result<f64, MetricError> {
    if x.len() != y.len() {
        return Err(MetricError::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(MetricError::TooFewSamples(x.len()));
    }
    let a = centered_distances(x);
    let b = centered_distances(y);
    let n = x.len();
    let n2 = (n * n) as f64;
    let mut cov = 0.0;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    for i in 0..n {
        for j in 0..n {
            cov += a[i][j] * b[i][j];
            var_x += a[i][j] * a[i][j];
            var_y += b[i][j] * b[i][j];
        }
    }
    cov /= n2;
    var_x /= n2;
    var_y /= n2;
    if var_x <= 0.0 || var_y <= 0.0 {
        return Ok(0.0);
    }
    let r2 = cov / (var_x * var_y).sqrt();
    Ok(r2.max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn samples() -> Vec<Vec<f64>> {
        vec![
            vec![0.1, 0.7, 0.2],
            vec![0.5, 0.3, 0.2],
            vec![0.9, 0.05, 0.05],
            vec![0.3, 0.3, 0.4],
        ]
    }

    #[test]
    fn identical_samples_have_correlation_one() {
        let x = samples();
        let v = distance_correlation(&x, &x).unwrap();
        assert!((v - 1.0).abs() < 1e-9);
    }

    #[test]
    fn constant_sample_is_zero_by_convention() {
        let x = vec![vec![0.5, 0.5]; 4];
        let y = samples();
        assert_eq!(distance_correlation(&x, &y).unwrap(), 0.0);
    }

    #[test]
    fn affine_images_have_correlation_one() {
        let x = samples();
        let y: Vec<Vec<f64>> = x
            .iter()
            .map(|row| row.iter().map(|v| 3.0 * v + 1.0).collect())
            .collect();
        let v = distance_correlation(&x, &y).unwrap();
        assert!((v - 1.0).abs() < 1e-9);
    }

    #[test]
    fn size_mismatch_and_tiny_samples_are_errors() {
        assert!(distance_correlation(&samples()[..2], &samples()[..3]).is_err());
        assert!(distance_correlation(&samples()[..1], &samples()[..1]).is_err());
    }

    #[test]
    fn value_is_bounded() {
        let x = samples();
        let y = vec![
            vec![0.9, 0.1, 0.0],
            vec![0.2, 0.2, 0.6],
            vec![0.1, 0.8, 0.1],
            vec![0.4, 0.4, 0.2],
        ];
        let v = distance_correlation(&x, &y).unwrap();
        assert!((0.0..=1.0 + 1e-12).contains(&v));
    }
}
