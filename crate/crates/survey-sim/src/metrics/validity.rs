//! Invalid/partially-valid response accounting and the exclusion rule
//! gating alignment metrics.

use super::SpecMetrics;
use crate::token_map::Validity;

/// Fractions of invalid and partially valid responses over all respondents
/// of one specification.
pub fn validity_stats(validities: &[Validity]) -> (f64, f64) {
    if validities.is_empty() {
        return (0.0, 0.0);
    }
    let n = validities.len() as f64;
    let invalid = validities
        .iter()
        .filter(|v| **v == Validity::Invalid)
        .count() as f64;
    let partial = validities
        .iter()
        .filter(|v| **v == Validity::Partial)
        .count() as f64;
    (invalid / n, partial / n)
}

/// Default exclusion threshold: specifications with more than 10% invalid
/// responses lose their alignment, robustness, and calibration fields.
pub const DEFAULT_EXCLUSION_THRESHOLD: f64 = 0.10;

/// Suppresses the gated fields when the invalid fraction exceeds the
/// threshold (strictly). Individual-level F1 and accuracy stay: invalid
/// responses are counted as incorrect there, not excluded.
pub fn apply_exclusion(metrics: &mut SpecMetrics, threshold: f64) {
    if metrics.invalid_fraction > threshold {
        metrics.population = None;
        metrics.subpopulations = None;
        metrics.dcor = None;
        metrics.brier = None;
        metrics.kappa_scales = None;
        metrics.kappa_seeds = None;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::AlignmentValues;

    fn metrics(invalid_fraction: f64) -> SpecMetrics {
        SpecMetrics {
            macro_f1: 0.5,
            accuracy: 0.5,
            invalid_fraction,
            partial_fraction: 0.0,
            population: Some(AlignmentValues {
                distance: 0.1,
                jsd: 0.05,
            }),
            subpopulations: Some(Default::default()),
            dcor: Some(0.9),
            brier: Some(0.1),
            kappa_scales: Some(0.7),
            kappa_seeds: Some(0.8),
        }
    }

    #[test]
    fn validity_fractions() {
        use Validity::*;
        let (invalid, partial) = validity_stats(&[Full, Full, Invalid, Partial, Full]);
        assert!((invalid - 0.2).abs() < 1e-12);
        assert!((partial - 0.2).abs() < 1e-12);
        assert_eq!(validity_stats(&[Full, Full]), (0.0, 0.0));
    }

    #[test]
    fn exactly_at_threshold_is_retained() {
        let mut m = metrics(0.10);
        apply_exclusion(&mut m, DEFAULT_EXCLUSION_THRESHOLD);
        assert!(m.population.is_some());
        assert!(m.dcor.is_some());
        assert!(m.kappa_scales.is_some());
    }

    #[test]
    fn above_threshold_is_gated() {
        let mut m = metrics(0.11);
        apply_exclusion(&mut m, DEFAULT_EXCLUSION_THRESHOLD);
        assert!(m.population.is_none());
        assert!(m.subpopulations.is_none());
        assert!(m.dcor.is_none());
        assert!(m.brier.is_none());
        assert!(m.kappa_scales.is_none());
        assert!(m.kappa_seeds.is_none());
        // Individual-level metrics stay.
        assert_eq!(m.macro_f1, 0.5);
        assert_eq!(m.accuracy, 0.5);
    }

    #[test]
    fn zero_invalids_retained() {
        let mut m = metrics(0.0);
        apply_exclusion(&mut m, DEFAULT_EXCLUSION_THRESHOLD);
        assert!(m.population.is_some());
    }
}
