//! Stratified baseline: randomly shuffles the human survey responses, so
//! the marginal distribution is preserved exactly while individual
//! assignment is chance.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::Respondent;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BaselineError {
    #[error("respondent {respondent} has no ground truth for question {question}")]
    MissingGroundTruth {
        respondent: String,
        question: String,
    },
    #[error("no respondents")]
    Empty,
}

/// Assigns each respondent a uniformly shuffled ground-truth answer of the
/// question. Deterministic given the seed; the returned assignment is a
/// permutation of the ground-truth multiset.
pub fn stratified_baseline(
    respondents: &[Respondent],
    question_id: &str,
    seed: u64,
) -> Result<BTreeMap<String, String>, BaselineError> {
    if respondents.is_empty() {
        return Err(BaselineError::Empty);
    }
    let mut truths = Vec::with_capacity(respondents.len());
    for respondent in respondents {
        let truth =
            respondent
                .truth(question_id)
                .ok_or_else(|| BaselineError::MissingGroundTruth {
                    respondent: respondent.id.clone(),
                    question: question_id.to_string(),
                })?;
        truths.push(truth.to_string());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    truths.shuffle(&mut rng);
    Ok(respondents
        .iter()
        .map(|r| r.id.clone())
        .zip(truths)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn respondents(truths: &[&str]) -> Vec<Respondent> {
        truths
            .iter()
            .enumerate()
            .map(|(i, t)| Respondent {
                id: format!("r{i}"),
                attributes: BTreeMap::new(),
                ground_truth: BTreeMap::from([("q".to_string(), t.to_string())]),
            })
            .collect()
    }

    fn multiset(values: impl IntoIterator<Item = String>) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for v in values {
            *counts.entry(v).or_insert(0) += 1;
        }
        counts
    }

    #[test]
    fn preserves_the_ground_truth_multiset() {
        let rs = respondents(&["a", "a", "b"]);
        for seed in 0..50 {
            let assignment = stratified_baseline(&rs, "q", seed).unwrap();
            assert_eq!(
                multiset(assignment.into_values()),
                multiset(["a", "a", "b"].map(String::from)),
                "seed {seed}"
            );
        }
    }

    #[test]
    fn single_respondent_gets_own_truth() {
        let rs = respondents(&["a"]);
        let assignment = stratified_baseline(&rs, "q", 7).unwrap();
        assert_eq!(assignment["r0"], "a");
    }

    #[test]
    fn same_seed_same_assignment() {
        let rs = respondents(&["a", "b", "c", "a", "b"]);
        let first = stratified_baseline(&rs, "q", 42).unwrap();
        let second = stratified_baseline(&rs, "q", 42).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn missing_ground_truth_is_an_error() {
        let mut rs = respondents(&["a", "b"]);
        rs[1].ground_truth.clear();
        let err = stratified_baseline(&rs, "q", 1).unwrap_err();
        assert!(matches!(err, BaselineError::MissingGroundTruth { .. }));
    }
}
