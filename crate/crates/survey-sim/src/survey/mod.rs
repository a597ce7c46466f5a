//! Survey instrument, respondent data, scale-variant rendering, persona
//! prompt templating, and the stratified baseline.

mod baseline;
mod dataset;
pub mod prompts;
mod scale;
mod template;

pub use baseline::{stratified_baseline, BaselineError};
pub use dataset::{
    load_dataset, AttributeKind, AttributeSpec, Dataset, DatasetError, GroundTruthSpec, Respondent,
    Schema,
};
pub use scale::{
    index_label, render_scale, Labeling, OptionOrder, PresentedEntry, PresentedScale, ScaleVariant,
};
pub use template::{PromptTemplate, TemplateError, TemplateSet, DEFAULT_SENTENCE_MARKER};

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Language of a survey instrument. Determines prompt templates, JSON keys,
/// and the answer prefix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    En,
    De,
}

impl Language {
    pub fn code(self) -> &'static str {
        match self {
            Language::En => "en",
            Language::De => "de",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "en" => Some(Language::En),
            "de" => Some(Language::De),
            _ => None,
        }
    }
}

/// Whether the response options form an unordered set or an ordered scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScaleKind {
    Categorical,
    /// Likert-style; option position is the rank.
    Ordinal,
}

/// One response option of a closed-ended question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseOption {
    /// Stable key, unique within the question.
    pub id: String,
    /// Display string in the dataset language.
    pub full_text: String,
    /// Alternate surface strings a model may use for this option,
    /// e.g. "Donald Trump" for id "trump".
    #[serde(default)]
    pub aliases: BTreeSet<String>,
}

impl ResponseOption {
    pub fn new(id: impl Into<String>, full_text: impl Into<String>) -> Self {
        ResponseOption {
            id: id.into(),
            full_text: full_text.into(),
            aliases: BTreeSet::new(),
        }
    }

    pub fn with_aliases<I, S>(mut self, aliases: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.aliases.extend(aliases.into_iter().map(Into::into));
        self
    }

    /// Full text plus aliases.
    pub fn surface_forms(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.full_text.as_str()).chain(self.aliases.iter().map(String::as_str))
    }
}

/// A closed-ended survey question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurveyQuestion {
    pub id: String,
    pub text: String,
    /// Ordered; for ordinal questions the position is the rank.
    pub options: Vec<ResponseOption>,
    pub scale_kind: ScaleKind,
    pub language: Language,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum InstrumentError {
    #[error("question {0}: needs at least 2 response options")]
    TooFewOptions(String),
    #[error("question {question}: duplicate option id {option}")]
    DuplicateOptionId { question: String, option: String },
    #[error("question {question}: option {option} has empty full_text")]
    EmptyFullText { question: String, option: String },
    #[error("question {question}: surface {surface:?} is shared by options {a} and {b}")]
    SharedSurface {
        question: String,
        surface: String,
        a: String,
        b: String,
    },
}

impl SurveyQuestion {
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        options: Vec<ResponseOption>,
        scale_kind: ScaleKind,
        language: Language,
    ) -> Result<Self, InstrumentError> {
        let question = SurveyQuestion {
            id: id.into(),
            text: text.into(),
            options,
            scale_kind,
            language,
        };
        question.validate()?;
        Ok(question)
    }

    /// Checks the instrument invariants: at least two options, unique ids,
    /// non-empty texts, and no surface string shared verbatim between two
    /// options.
    pub fn validate(&self) -> Result<(), InstrumentError> {
        if self.options.len() < 2 {
            return Err(InstrumentError::TooFewOptions(self.id.clone()));
        }
        let mut ids = BTreeSet::new();
        let mut surfaces: std::collections::BTreeMap<String, String> =
            std::collections::BTreeMap::new();
        for option in &self.options {
            if !ids.insert(option.id.clone()) {
                return Err(InstrumentError::DuplicateOptionId {
                    question: self.id.clone(),
                    option: option.id.clone(),
                });
            }
            if option.full_text.is_empty() {
                return Err(InstrumentError::EmptyFullText {
                    question: self.id.clone(),
                    option: option.id.clone(),
                });
            }
            for surface in option.surface_forms() {
                if let Some(other) = surfaces.insert(surface.to_string(), option.id.clone()) {
                    if other != option.id {
                        return Err(InstrumentError::SharedSurface {
                            question: self.id.clone(),
                            surface: surface.to_string(),
                            a: other,
                            b: option.id.clone(),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn option(&self, id: &str) -> Option<&ResponseOption> {
        self.options.iter().find(|o| o.id == id)
    }

    /// Position of an option in the original (rank) order.
    pub fn option_index(&self, id: &str) -> Option<usize> {
        self.options.iter().position(|o| o.id == id)
    }

    pub fn option_ids(&self) -> impl Iterator<Item = &str> {
        self.options.iter().map(|o| o.id.as_str())
    }
}

/// System + user prompt pair, with an optional assistant prefill used only
/// by the answer-prefix method.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_text: String,
    pub user_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assistant_prefill: Option<String>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn options() -> Vec<ResponseOption> {
        vec![
            ResponseOption::new("clinton", "Clinton").with_aliases(["Hillary Clinton"]),
            ResponseOption::new("trump", "Trump").with_aliases(["Donald Trump"]),
            ResponseOption::new("non_voter", "Non-voter"),
        ]
    }

    #[test]
    fn valid_question_passes() {
        let q = SurveyQuestion::new(
            "vote",
            "Who did you vote for?",
            options(),
            ScaleKind::Categorical,
            Language::En,
        );
        assert!(q.is_ok());
    }

    #[test]
    fn rejects_single_option() {
        let err = SurveyQuestion::new(
            "vote",
            "Who?",
            vec![ResponseOption::new("a", "A")],
            ScaleKind::Categorical,
            Language::En,
        )
        .unwrap_err();
        assert_eq!(err, InstrumentError::TooFewOptions("vote".into()));
    }

    #[test]
    fn rejects_duplicate_option_id() {
        let err = SurveyQuestion::new(
            "vote",
            "Who?",
            vec![ResponseOption::new("a", "A"), ResponseOption::new("a", "B")],
            ScaleKind::Categorical,
            Language::En,
        )
        .unwrap_err();
        assert!(matches!(err, InstrumentError::DuplicateOptionId { .. }));
    }

    #[test]
    fn rejects_alias_shared_between_options() {
        let err = SurveyQuestion::new(
            "vote",
            "Who?",
            vec![
                ResponseOption::new("a", "A").with_aliases(["shared"]),
                ResponseOption::new("b", "B").with_aliases(["shared"]),
            ],
            ScaleKind::Categorical,
            Language::En,
        )
        .unwrap_err();
        assert!(matches!(err, InstrumentError::SharedSurface { .. }));
    }

    #[test]
    fn rejects_empty_full_text() {
        let err = SurveyQuestion::new(
            "vote",
            "Who?",
            vec![ResponseOption::new("a", ""), ResponseOption::new("b", "B")],
            ScaleKind::Categorical,
            Language::En,
        )
        .unwrap_err();
        assert!(matches!(err, InstrumentError::EmptyFullText { .. }));
    }

    #[test]
    fn duplicate_alias_within_one_option_is_fine() {
        // full_text repeated as an alias of the same option is not a conflict
        let q = SurveyQuestion::new(
            "vote",
            "Who?",
            vec![
                ResponseOption::new("a", "A").with_aliases(["A"]),
                ResponseOption::new("b", "B"),
            ],
            ScaleKind::Categorical,
            Language::En,
        );
        assert!(q.is_ok());
    }
}
