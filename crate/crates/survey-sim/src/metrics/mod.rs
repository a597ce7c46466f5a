//! Individual-level, robustness, subpopulation-level, calibration, and
//! global-alignment metrics, plus subpopulation construction and
//! validity-based exclusion.

mod agreement;
mod calibration;
mod dcor;
mod distance;
mod individual;
mod subpop;
mod validity;

pub use agreement::{fleiss_kappa, fleiss_kappa_from_labels};
pub use calibration::{brier, mean_brier};
pub use dcor::distance_correlation;
pub use distance::{jsd, tv_distance, wasserstein1};
pub use individual::{accuracy, macro_f1};
pub use subpop::{build_subpopulations, subpop_distribution};
pub use validity::{apply_exclusion, validity_stats, DEFAULT_EXCLUSION_THRESHOLD};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::methods::Prediction;
use crate::survey::SurveyQuestion;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("empty input")]
    Empty,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("1-Wasserstein distance applies to ordinal questions only")]
    NotOrdinal,
    #[error("need at least 2 raters, got {0}")]
    TooFewRaters(usize),
    #[error("item {0} has a different number of ratings")]
    UnevenRaters(usize),
    #[error("rating category {0} out of range")]
    CategoryOutOfRange(usize),
    #[error("all members excluded")]
    AllExcluded,
    #[error("need at least 2 paired samples, got {0}")]
    TooFewSamples(usize),
    #[error("truth index {0} out of range")]
    TruthOutOfRange(usize),
    #[error("distribution is not normalized (sum {0})")]
    NotNormalized(f64),
}

/// A probability vector aligned to the question's original option order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseDistribution(Vec<f64>);

impl ResponseDistribution {
    /// Wraps an already-normalized vector; entries must sum to 1 within
    /// 1e-9.
    pub fn new(values: Vec<f64>) -> Result<Self, MetricError> {
        if values.is_empty() {
            return Err(MetricError::Empty);
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(MetricError::NotNormalized(sum));
        }
        Ok(ResponseDistribution(values))
    }

    /// Normalizes a non-negative vector with positive mass.
    pub fn from_unnormalized(values: Vec<f64>) -> Result<Self, MetricError> {
        if values.is_empty() {
            return Err(MetricError::Empty);
        }
        let sum: f64 = values.iter().sum();
        if sum <= 0.0 {
            return Err(MetricError::NotNormalized(sum));
        }
        Ok(ResponseDistribution(
            values.into_iter().map(|v| v / sum).collect(),
        ))
    }

    pub fn one_hot(len: usize, index: usize) -> Result<Self, MetricError> {
        if index >= len {
            return Err(MetricError::TruthOutOfRange(index));
        }
        let mut values = vec![0.0; len];
        values[index] = 1.0;
        Ok(ResponseDistribution(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// One-hot encodes choices and aligns parsed distributions to the
/// question's original option order. Invalid predictions carry no
/// distribution and are excluded from aggregation.
pub fn to_distribution(
    prediction: &Prediction,
    question: &SurveyQuestion,
) -> Option<ResponseDistribution> {
    let n = question.options.len();
    match prediction {
        Prediction::Choice { option_id } => {
            let index = question.option_index(option_id)?;
            ResponseDistribution::one_hot(n, index).ok()
        }
        Prediction::Distribution { probabilities, .. } => {
            let values: Vec<f64> = question
                .options
                .iter()
                .map(|o| probabilities.get(&o.id).copied().unwrap_or(0.0))
                .collect();
            // Parsed distributions are already normalized; only renormalize
            // when the stored values drifted beyond the tolerance.
            ResponseDistribution::new(values.clone())
                .or_else(|_| ResponseDistribution::from_unnormalized(values))
                .ok()
        }
        Prediction::Invalid => None,
    }
}

/// One subpopulation: the respondents sharing one value of one persona
/// attribute. Age-typed attributes are bracketed by decade.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SubpopulationKey {
    pub attribute: String,
    pub value: String,
}

impl SubpopulationKey {
    pub fn new(attribute: impl Into<String>, value: impl Into<String>) -> Self {
        SubpopulationKey {
            attribute: attribute.into(),
            value: value.into(),
        }
    }
}

/// Distance of a generated distribution from the human one for one group:
/// the scale-appropriate transport distance plus the Jensen-Shannon
/// divergence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentValues {
    /// Total variation for categorical scales, 1-Wasserstein for ordinal.
    pub distance: f64,
    pub jsd: f64,
}

/// All metrics of one simulation specification. Alignment, robustness, and
/// calibration fields are `None` when gated by the invalid-fraction
/// exclusion rule.
#[derive(Debug, Clone, PartialEq)]
pub struct SpecMetrics {
    pub macro_f1: f64,
    pub accuracy: f64,
    pub invalid_fraction: f64,
    pub partial_fraction: f64,
    /// Alignment over the whole respondent population.
    pub population: Option<AlignmentValues>,
    pub subpopulations: Option<BTreeMap<SubpopulationKey, AlignmentValues>>,
    pub dcor: Option<f64>,
    pub brier: Option<f64>,
    /// Fleiss' kappa across the four scale variants.
    pub kappa_scales: Option<f64>,
    /// Fleiss' kappa across the sampled seeds.
    pub kappa_seeds: Option<f64>,
}
