//! Subpopulation construction and aggregation.
//!
//! One group per (attribute, observed value); respondents missing the
//! attribute are absent from that attribute's groups. Age-typed attributes
//! are bracketed by flooring to multiples of 10; the raw value is still
//! what prompts see.

use std::collections::{BTreeMap, BTreeSet};

use super::{MetricError, ResponseDistribution, SubpopulationKey};
use crate::survey::{AttributeKind, AttributeSpec, Respondent};

/// Splits the respondents into subpopulations over all unique values of
/// the grouping attributes.
pub fn build_subpopulations(
    respondents: &[Respondent],
    attributes: &[AttributeSpec],
) -> BTreeMap<SubpopulationKey, BTreeSet<String>> {
    let mut groups: BTreeMap<SubpopulationKey, BTreeSet<String>> = BTreeMap::new();
    for spec in attributes {
        for respondent in respondents {
            let Some(raw) = respondent.attribute(&spec.name) else {
                continue;
            };
            let value = match spec.kind {
                AttributeKind::Text => raw.to_string(),
                AttributeKind::Age => match raw.parse::<f64>() {
                    Ok(age) => {
                        let bracket = (age / 10.0).floor() as i64 * 10;
                        bracket.to_string()
                    }
                    Err(_) => continue,
                },
            };
            groups
                .entry(SubpopulationKey::new(spec.name.clone(), value))
                .or_default()
                .insert(respondent.id.clone());
        }
    }
    groups
}

/// Mean of the members' individual-level distributions; members without a
/// distribution (invalid predictions) are dropped.
pub fn subpop_distribution(
    distributions: &BTreeMap<String, ResponseDistribution>,
    members: &BTreeSet<String>,
) -> Result<ResponseDistribution, MetricError> {
    let mut sum: Option<Vec<f64>> = None;
    let mut count = 0usize;
    for member in members {
        let Some(dist) = distributions.get(member) else {
            continue;
        };
        match &mut sum {
            None => sum = Some(dist.values().to_vec()),
            Some(acc) => {
                if acc.len() != dist.len() {
                    return Err(MetricError::LengthMismatch {
                        left: acc.len(),
                        right: dist.len(),
                    });
                }
                for (a, b) in acc.iter_mut().zip(dist.values()) {
                    *a += b;
                }
            }
        }
        count += 1;
    }
    let Some(mut acc) = sum else {
        return Err(MetricError::AllExcluded);
    };
    for value in &mut acc {
        *value /= count as f64;
    }
    ResponseDistribution::new(acc)
}
