//! The eight survey response generation methods and their unified output.

mod parse;
mod runner;
mod schema;
pub mod scripting;

pub use parse::{argmax_option, extract_first_json_object, parse_choice, parse_distribution};
pub use runner::{
    classify_open, open_step, run_method, ClassifyMode, ClassifyOutcome, MethodOutcome,
    OpenOutputCache, RunContext,
};
pub use schema::{
    answer_key, build_choice_schema, build_distribution_schema, build_reasoning_schema,
    reasoning_key,
};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::token_map::Validity;

/// One of the eight survey response generation methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodId {
    FirstTokenProbabilities,
    FirstTokenRestricted,
    AnswerPrefix,
    RestrictedChoice,
    RestrictedReasoning,
    VerbalizedDistribution,
    OpenEndedClassification,
    OpenEndedDistribution,
}

impl MethodId {
    pub const ALL: [MethodId; 8] = [
        MethodId::FirstTokenProbabilities,
        MethodId::FirstTokenRestricted,
        MethodId::AnswerPrefix,
        MethodId::RestrictedChoice,
        MethodId::RestrictedReasoning,
        MethodId::VerbalizedDistribution,
        MethodId::OpenEndedClassification,
        MethodId::OpenEndedDistribution,
    ];

    pub fn key(self) -> &'static str {
        match self {
            MethodId::FirstTokenProbabilities => "first_token_probabilities",
            MethodId::FirstTokenRestricted => "first_token_restricted",
            MethodId::AnswerPrefix => "answer_prefix",
            MethodId::RestrictedChoice => "restricted_choice",
            MethodId::RestrictedReasoning => "restricted_reasoning",
            MethodId::VerbalizedDistribution => "verbalized_distribution",
            MethodId::OpenEndedClassification => "open_ended_classification",
            MethodId::OpenEndedDistribution => "open_ended_distribution",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.key() == s)
    }

    pub fn taxonomy(self) -> MethodTaxonomy {
        match self {
            MethodId::FirstTokenProbabilities => MethodTaxonomy {
                reads_token_probabilities: true,
                enforces_format_instructions: true,
                restricts_vocabulary: false,
                open_output_first: false,
                yields_distribution: true,
            },
            MethodId::FirstTokenRestricted => MethodTaxonomy {
                reads_token_probabilities: true,
                enforces_format_instructions: true,
                restricts_vocabulary: true,
                open_output_first: false,
                yields_distribution: true,
            },
            MethodId::AnswerPrefix => MethodTaxonomy {
                reads_token_probabilities: true,
                enforces_format_instructions: true,
                restricts_vocabulary: true,
                open_output_first: false,
                yields_distribution: true,
            },
            MethodId::RestrictedChoice => MethodTaxonomy {
                reads_token_probabilities: false,
                enforces_format_instructions: true,
                restricts_vocabulary: true,
                open_output_first: false,
                yields_distribution: false,
            },
            MethodId::RestrictedReasoning => MethodTaxonomy {
                reads_token_probabilities: false,
                enforces_format_instructions: true,
                restricts_vocabulary: true,
                open_output_first: true,
                yields_distribution: false,
            },
            MethodId::VerbalizedDistribution => MethodTaxonomy {
                reads_token_probabilities: false,
                enforces_format_instructions: true,
                restricts_vocabulary: true,
                open_output_first: false,
                yields_distribution: true,
            },
            MethodId::OpenEndedClassification => MethodTaxonomy {
                reads_token_probabilities: false,
                enforces_format_instructions: false,
                restricts_vocabulary: false,
                open_output_first: true,
                yields_distribution: false,
            },
            MethodId::OpenEndedDistribution => MethodTaxonomy {
                reads_token_probabilities: false,
                enforces_format_instructions: false,
                restricts_vocabulary: false,
                open_output_first: true,
                yields_distribution: true,
            },
        }
    }

    /// The two-step open generation methods.
    pub fn is_open_generation(self) -> bool {
        matches!(
            self,
            MethodId::OpenEndedClassification | MethodId::OpenEndedDistribution
        )
    }
}

impl std::fmt::Display for MethodId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.key())
    }
}

/// How a method accesses and constrains the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MethodTaxonomy {
    pub reads_token_probabilities: bool,
    pub enforces_format_instructions: bool,
    /// In the two-step open methods, only the classification step is
    /// restricted.
    pub restricts_vocabulary: bool,
    pub open_output_first: bool,
    pub yields_distribution: bool,
}

/// Distribution coverage of the question's options.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Coverage {
    Full,
    Partial,
}

impl From<Coverage> for Validity {
    fn from(coverage: Coverage) -> Validity {
        match coverage {
            Coverage::Full => Validity::Full,
            Coverage::Partial => Validity::Partial,
        }
    }
}

/// The parsed outcome of one method run for one respondent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Prediction {
    Choice {
        option_id: String,
    },
    Distribution {
        /// option_id -> probability; sums to 1.
        probabilities: BTreeMap<String, f64>,
        coverage: Coverage,
    },
    /// Output contained none of the possible response options.
    Invalid,
}

impl Prediction {
    pub fn validity(&self) -> Validity {
        match self {
            Prediction::Choice { .. } => Validity::Full,
            Prediction::Distribution { coverage, .. } => (*coverage).into(),
            Prediction::Invalid => Validity::Invalid,
        }
    }

    pub fn is_invalid(&self) -> bool {
        matches!(self, Prediction::Invalid)
    }
}

/// Unified per-respondent output of every method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndividualPrediction {
    pub prediction: Prediction,
    pub raw_output: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning_text: Option<String>,
}

impl IndividualPrediction {
    pub fn invalid(raw_output: impl Into<String>) -> Self {
        IndividualPrediction {
            prediction: Prediction::Invalid,
            raw_output: raw_output.into(),
            reasoning_text: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_keys_round_trip() {
        for method in MethodId::ALL {
            assert_eq!(MethodId::parse(method.key()), Some(method));
        }
        assert_eq!(MethodId::parse("unknown"), None);
    }

    #[test]
    fn taxonomy_matches_the_method_families() {
        // Only the three token methods read logprobs.
        let token_methods = [
            MethodId::FirstTokenProbabilities,
            MethodId::FirstTokenRestricted,
            MethodId::AnswerPrefix,
        ];
        for method in MethodId::ALL {
            assert_eq!(
                method.taxonomy().reads_token_probabilities,
                token_methods.contains(&method),
                "{method}"
            );
        }
        // Distribution-producing methods: token methods, verbalized, open distribution.
        let distribution_methods = [
            MethodId::FirstTokenProbabilities,
            MethodId::FirstTokenRestricted,
            MethodId::AnswerPrefix,
            MethodId::VerbalizedDistribution,
            MethodId::OpenEndedDistribution,
        ];
        for method in MethodId::ALL {
            assert_eq!(
                method.taxonomy().yields_distribution,
                distribution_methods.contains(&method),
                "{method}"
            );
        }
        // Open-output-first: reasoning plus the two open methods.
        let open_first = [
            MethodId::RestrictedReasoning,
            MethodId::OpenEndedClassification,
            MethodId::OpenEndedDistribution,
        ];
        for method in MethodId::ALL {
            assert_eq!(
                method.taxonomy().open_output_first,
                open_first.contains(&method),
                "{method}"
            );
        }
        // Unrestricted vocabulary: first-token probabilities and the first
        // step of the open methods.
        let unrestricted = [
            MethodId::FirstTokenProbabilities,
            MethodId::OpenEndedClassification,
            MethodId::OpenEndedDistribution,
        ];
        for method in MethodId::ALL {
            assert_eq!(
                method.taxonomy().restricts_vocabulary,
                !unrestricted.contains(&method),
                "{method}"
            );
        }
    }
}
