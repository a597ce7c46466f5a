//! Dataset ingestion: a declarative schema binds CSV columns to persona
//! attributes and ground-truth answers, so the same engine serves any
//! survey file without dataset-specific code.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Language, SurveyQuestion};

/// How an attribute is treated beyond plain text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttributeKind {
    #[default]
    Text,
    /// Numeric age; bracketed by decade for subpopulation grouping only,
    /// prompts use the raw value.
    Age,
}

/// Binding of one persona attribute to a CSV column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeSpec {
    pub name: String,
    /// Column header; defaults to the attribute name.
    #[serde(default)]
    pub column: Option<String>,
    #[serde(default)]
    pub kind: AttributeKind,
    /// Optional recoding of raw cell values into prompt phrases.
    #[serde(default)]
    pub value_map: Option<BTreeMap<String, String>>,
}

impl AttributeSpec {
    pub fn new(name: impl Into<String>) -> Self {
        AttributeSpec {
            name: name.into(),
            column: None,
            kind: AttributeKind::Text,
            value_map: None,
        }
    }

    pub fn column_name(&self) -> &str {
        self.column.as_deref().unwrap_or(&self.name)
    }
}

/// Binding of one question's ground-truth answers to a CSV column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthSpec {
    pub question_id: String,
    pub column: String,
    /// Optional recoding of raw cell values into option ids.
    #[serde(default)]
    pub value_map: Option<BTreeMap<String, String>>,
}

/// Declarative dataset schema: respondent id column, persona attribute
/// bindings, and ground-truth bindings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub id_column: String,
    pub attributes: Vec<AttributeSpec>,
    pub ground_truth: Vec<GroundTruthSpec>,
}

/// One survey participant: persona attributes plus the ground-truth answer
/// used for evaluation. Missing attribute values are absent from the map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Respondent {
    pub id: String,
    pub attributes: BTreeMap<String, String>,
    /// question_id -> option_id, absent when the respondent did not answer.
    pub ground_truth: BTreeMap<String, String>,
}

impl Respondent {
    pub fn attribute(&self, name: &str) -> Option<&str> {
        self.attributes.get(name).map(String::as_str)
    }

    pub fn truth(&self, question_id: &str) -> Option<&str> {
        self.ground_truth.get(question_id).map(String::as_str)
    }
}

/// A loaded survey dataset: instrument plus respondents.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dataset {
    pub id: String,
    pub language: Language,
    pub questions: Vec<SurveyQuestion>,
    pub respondents: Vec<Respondent>,
    pub schema: Schema,
}

impl Dataset {
    pub fn question(&self, id: &str) -> Option<&SurveyQuestion> {
        self.questions.iter().find(|q| q.id == id)
    }

    pub fn respondent(&self, id: &str) -> Option<&Respondent> {
        self.respondents.iter().find(|r| r.id == id)
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed file: {0}")]
    Malformed(String),
    #[error("schema mismatch: column {0:?} not found in header")]
    MissingColumn(String),
    #[error("duplicate respondent id {0:?}")]
    DuplicateRespondentId(String),
    #[error("row {row}: unmapped value {value:?} in column {column:?}")]
    UnmappedValue {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}: {value:?} in age column {column:?} is not numeric")]
    NonNumericAge {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}: ground truth {value:?} is not an option of question {question}")]
    UnknownOption {
        row: usize,
        question: String,
        value: String,
    },
}

/// Loads respondents from a UTF-8 CSV file with a header row, one respondent
/// per row, empty cell = missing value.
///
/// Rows missing ground truth for every simulated question are excluded.
/// Per-attribute missing values stay absent so persona sentences referencing
/// them can be omitted later.
pub fn load_dataset(
    path: &Path,
    schema: &Schema,
    questions: &[SurveyQuestion],
) -> Result<Vec<Respondent>, DatasetError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => DatasetError::Io {
                path: path.display().to_string(),
                source: std::io::Error::other(e.to_string()),
            },
            _ => DatasetError::Malformed(e.to_string()),
        })?;

    let headers = reader
        .headers()
        .map_err(|e| DatasetError::Malformed(e.to_string()))?
        .clone();
    let column_index = |name: &str| -> Result<usize, DatasetError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DatasetError::MissingColumn(name.to_string()))
    };

    let id_idx = column_index(&schema.id_column)?;
    let attr_idx: Vec<usize> = schema
        .attributes
        .iter()
        .map(|a| column_index(a.column_name()))
        .collect::<Result<_, _>>()?;
    let truth_idx: Vec<usize> = schema
        .ground_truth
        .iter()
        .map(|g| column_index(&g.column))
        .collect::<Result<_, _>>()?;

    let mut respondents = Vec::new();
    let mut seen_ids = BTreeSet::new();
    for (row_no, row) in reader.records().enumerate() {
        let row = row.map_err(|e| DatasetError::Malformed(e.to_string()))?;
        let cell = |idx: usize| row.get(idx).unwrap_or("").trim().to_string();

        let id = cell(id_idx);
        if id.is_empty() {
            return Err(DatasetError::Malformed(format!(
                "row {row_no}: empty respondent id"
            )));
        }
        if !seen_ids.insert(id.clone()) {
            return Err(DatasetError::DuplicateRespondentId(id));
        }

        let mut attributes = BTreeMap::new();
        for (spec, &idx) in schema.attributes.iter().zip(&attr_idx) {
            let raw = cell(idx);
            if raw.is_empty() {
                continue;
            }
            let value = match &spec.value_map {
                Some(map) => map
                    .get(&raw)
                    .cloned()
                    .ok_or_else(|| DatasetError::UnmappedValue {
                        row: row_no,
                        column: spec.column_name().to_string(),
                        value: raw.clone(),
                    })?,
                None => raw,
            };
            if spec.kind == AttributeKind::Age && value.parse::<f64>().is_err() {
                return Err(DatasetError::NonNumericAge {
                    row: row_no,
                    column: spec.column_name().to_string(),
                    value,
                });
            }
            attributes.insert(spec.name.clone(), value);
        }

        let mut ground_truth = BTreeMap::new();
        for (spec, &idx) in schema.ground_truth.iter().zip(&truth_idx) {
            let raw = cell(idx);
            if raw.is_empty() {
                continue;
            }
            let option_id = match &spec.value_map {
                Some(map) => map
                    .get(&raw)
                    .cloned()
                    .ok_or_else(|| DatasetError::UnmappedValue {
                        row: row_no,
                        column: spec.column.clone(),
                        value: raw.clone(),
                    })?,
                None => raw,
            };
            if let Some(question) = questions.iter().find(|q| q.id == spec.question_id) {
                if question.option(&option_id).is_none() {
                    return Err(DatasetError::UnknownOption {
                        row: row_no,
                        question: spec.question_id.clone(),
                        value: option_id,
                    });
                }
            }
            ground_truth.insert(spec.question_id.clone(), option_id);
        }

        // Exclusion rule: respondents without ground truth on any simulated
        // question carry no evaluation signal.
        if ground_truth.is_empty() {
            continue;
        }
        respondents.push(Respondent {
            id,
            attributes,
            ground_truth,
        });
    }
    Ok(respondents)
}
