//! Fleiss' kappa: chance-corrected agreement among a fixed number of
//! raters assigning categorical labels.

use std::collections::BTreeMap;

use super::MetricError;

/// Fleiss' kappa over an items x raters matrix of category indices.
///
/// Returns 1 when expected agreement is already perfect (all ratings in a
/// single category), since observed agreement is then perfect too.
pub fn fleiss_kappa(items: &[Vec<usize>], n_categories: usize) -> Result<f64, MetricError> {
    if items.is_empty() {
        return Err(MetricError::Empty);
    }
    let n_raters = items[0].len();
    if n_raters < 2 {
        return Err(MetricError::TooFewRaters(n_raters));
    }
    let mut category_totals = vec![0usize; n_categories];
    let mut agreement_sum = 0.0;
    for (item_index, ratings) in items.iter().enumerate() {
        if ratings.len() != n_raters {
            return Err(MetricError::UnevenRaters(item_index));
        }
        let mut counts = vec![0usize; n_categories];
        for &category in ratings {
            if category >= n_categories {
                return Err(MetricError::CategoryOutOfRange(category));
            }
            counts[category] += 1;
            category_totals[category] += 1;
        }
        let squares: usize = counts.iter().map(|&c| c * c).sum();
        agreement_sum += (squares - n_raters) as f64 / (n_raters * (n_raters - 1)) as f64;
    }
    let observed = agreement_sum / items.len() as f64;
    let total_ratings = (items.len() * n_raters) as f64;
    let expected: f64 = category_totals
        .iter()
        .map(|&t| {
            let p = t as f64 / total_ratings;
            p * p
        })
        .sum();
    if (1.0 - expected).abs() < 1e-12 {
        return Ok(1.0);
    }
    Ok((observed - expected) / (1.0 - expected))
}

/// Convenience wrapper assigning category indices to arbitrary ordered
/// labels.
pub fn fleiss_kappa_from_labels<T: Ord>(items: &[Vec<T>]) -> Result<f64, MetricError> {
    let mut categories: BTreeMap<&T, usize> = BTreeMap::new();
    for ratings in items {
        for label in ratings {
            let next = categories.len();
            categories.entry(label).or_insert(next);
        }
    }
    let n_categories = categories.len().max(1);
    let indexed: Vec<Vec<usize>> = items
        .iter()
        .map(|ratings| ratings.iter().map(|label| categories[label]).collect())
        .collect();
    fleiss_kappa(&indexed, n_categories)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unanimous_raters_score_one() {
        // Varied categories across items: expected agreement < 1.
        let items = vec![vec![0, 0, 0], vec![1, 1, 1], vec![2, 2, 2]];
        assert_eq!(fleiss_kappa(&items, 3).unwrap(), 1.0);
    }

    #[test]
    fn single_category_everywhere_scores_one() {
        // Expected agreement is exactly 1 here; kappa is defined as 1.
        let items = vec![vec![0, 0, 0], vec![0, 0, 0]];
        assert_eq!(fleiss_kappa(&items, 1).unwrap(), 1.0);
    }

    #[test]
    fn two_items_three_raters_fixture() {
        // Ratings [A,A,B] and [A,B,B]: observed = 1/3, expected = 1/2,
        // kappa = -1/3.
        let items = vec![vec![0, 0, 1], vec![0, 1, 1]];
        let kappa = fleiss_kappa(&items, 2).unwrap();
        assert!((kappa - (-1.0 / 3.0)).abs() < 1e-9);
    }

    #[test]
    fn invariant_under_item_and_rater_permutation() {
        let items = vec![vec![0, 1, 2], vec![0, 0, 1], vec![2, 2, 2], vec![1, 0, 1]];
        let base = fleiss_kappa(&items, 3).unwrap();

        let mut reordered_items = items.clone();
        reordered_items.swap(0, 3);
        reordered_items.swap(1, 2);
        assert!((fleiss_kappa(&reordered_items, 3).unwrap() - base).abs() < 1e-12);

        let permuted_raters: Vec<Vec<usize>> =
            items.iter().map(|r| vec![r[2], r[0], r[1]]).collect();
        assert!((fleiss_kappa(&permuted_raters, 3).unwrap() - base).abs() < 1e-12);
    }

    #[test]
    fn shuffled_rater_column_scores_near_zero() {
        use rand::seq::SliceRandom;
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4242);
        let n = 5000;
        let first: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let mut second = first.clone();
        second.shuffle(&mut rng);
        let items: Vec<Vec<usize>> = first
            .into_iter()
            .zip(second)
            .map(|(a, b)| vec![a, b])
            .collect();
        let kappa = fleiss_kappa(&items, 3).unwrap();
        assert!(kappa.abs() < 0.05, "chance-level agreement, got {kappa}");
    }

    #[test]
    fn fewer_than_two_raters_is_an_error() {
        assert!(matches!(
            fleiss_kappa(&[vec![0]], 1),
            Err(MetricError::TooFewRaters(1))
        ));
        assert!(matches!(fleiss_kappa(&[], 1), Err(MetricError::Empty)));
    }

    #[test]
    fn label_wrapper_matches_index_form() {
        let labels = vec![vec!["a", "a", "b"], vec!["a", "b", "b"]];
        let by_label = fleiss_kappa_from_labels(&labels).unwrap();
        let by_index = fleiss_kappa(&[vec![0, 0, 1], vec![0, 1, 1]], 2).unwrap();
        assert!((by_label - by_index).abs() < 1e-12);
    }
}
