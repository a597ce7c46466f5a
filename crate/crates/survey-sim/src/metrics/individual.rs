//! Individual-level alignment: macro-averaged F1 and accuracy against the
//! human survey responses. Invalid predictions count as incorrect: a false
//! negative for their true class, a false positive nowhere.

use std::collections::BTreeSet;

use super::MetricError;

/// Macro-averaged F1 over the classes observed in the truths. Predictions
/// are option ids; `None` marks an invalid prediction.
pub fn macro_f1(pairs: &[(Option<&str>, &str)]) -> Result<f64, MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::Empty);
    }
    let classes: BTreeSet<&str> = pairs.iter().map(|(_, truth)| *truth).collect();
    let mut f1_sum = 0.0;
    for class in &classes {
        let mut tp = 0usize;
        let mut fp = 0usize;
        let mut fn_ = 0usize;
        for (pred, truth) in pairs {
            let predicted_class = *pred == Some(class);
            let true_class = truth == class;
            match (predicted_class, true_class) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
        let denominator = 2 * tp + fp + fn_;
        if denominator > 0 {
            f1_sum += 2.0 * tp as f64 / denominator as f64;
        }
    }
    Ok(f1_sum / classes.len() as f64)
}

/// Fraction of exactly correct predictions; invalid predictions are
/// incorrect.
pub fn accuracy(pairs: &[(Option<&str>, &str)]) -> Result<f64, MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::Empty);
    }
    let correct = pairs
        .iter()
        .filter(|(pred, truth)| *pred == Some(truth))
        .count();
    Ok(correct as f64 / pairs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions_score_one() {
        let pairs = vec![(Some("a"), "a"), (Some("b"), "b"), (Some("a"), "a")];
        assert_eq!(macro_f1(&pairs).unwrap(), 1.0);
        assert_eq!(accuracy(&pairs).unwrap(), 1.0);
    }

    #[test]
    fn mixed_predictions_match_hand_confusion_matrix() {
        // truths [A,A,B,B], preds [A,B,B,B]:
        // class A: tp=1 fn=1 fp=0 -> F1 = 2/3
        // class B: tp=2 fp=1 fn=0 -> F1 = 0.8
        let pairs = vec![
            (Some("a"), "a"),
            (Some("b"), "a"),
            (Some("b"), "b"),
            (Some("b"), "b"),
        ];
        let v = macro_f1(&pairs).unwrap();
        assert!((v - (2.0 / 3.0 + 0.8) / 2.0).abs() < 1e-12);
        assert!((accuracy(&pairs).unwrap() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn invalid_is_a_false_negative_without_false_positives() {
        // truths [A,B], preds [A, invalid]: class A F1=1, class B F1=0.
        let pairs = vec![(Some("a"), "a"), (None, "b")];
        let v = macro_f1(&pairs).unwrap();
        assert!((v - 0.5).abs() < 1e-12);
        assert!((accuracy(&pairs).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn all_invalid_scores_zero() {
        let pairs = vec![(None, "a"), (None, "b")];
        assert_eq!(macro_f1(&pairs).unwrap(), 0.0);
        assert_eq!(accuracy(&pairs).unwrap(), 0.0);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(macro_f1(&[]).is_err());
        assert!(accuracy(&[]).is_err());
    }

    #[test]
    fn scores_invariant_under_consistent_relabeling() {
        let pairs = vec![
            (Some("a"), "a"),
            (Some("b"), "a"),
            (Some("c"), "b"),
            (None, "c"),
        ];
        let relabeled = vec![
            (Some("x"), "x"),
            (Some("y"), "x"),
            (Some("z"), "y"),
            (None, "z"),
        ];
        assert_eq!(macro_f1(&pairs).unwrap(), macro_f1(&relabeled).unwrap());
        assert_eq!(accuracy(&pairs).unwrap(), accuracy(&relabeled).unwrap());
    }
}
