//! Persona prompt templating.
//!
//! A template is plain UTF-8 text with `{attribute}` placeholders. A
//! configurable marker splits the text into omission units ("sentences"):
//! when a unit references an attribute the respondent is missing, the whole
//! unit is dropped and the remaining units are concatenated unchanged.
//!
//! `{QUESTION}` and `{RESPONSE OPTIONS}` are special placeholders and are
//! always resolvable.

use std::collections::BTreeSet;
use std::path::Path;

use thiserror::Error;

use super::{Language, Respondent};

pub const QUESTION_PLACEHOLDER: &str = "QUESTION";
pub const RESPONSE_OPTIONS_PLACEHOLDER: &str = "RESPONSE OPTIONS";

/// Default marker separating omission units in template files.
pub const DEFAULT_SENTENCE_MARKER: &str = "|";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("unbalanced braces at byte {0}")]
    UnbalancedBraces(usize),
    #[error("placeholder {{{0}}} does not name a known attribute")]
    UnknownPlaceholder(String),
    #[error("cannot read template {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Placeholder(String),
}

/// One omission unit: literal text interleaved with placeholders.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Unit {
    segments: Vec<Segment>,
}

impl Unit {
    fn placeholders(&self) -> impl Iterator<Item = &str> {
        self.segments.iter().filter_map(|s| match s {
            Segment::Placeholder(name) => Some(name.as_str()),
            Segment::Literal(_) => None,
        })
    }
}

/// A parsed persona/user prompt template.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    units: Vec<Unit>,
}

impl PromptTemplate {
    /// Parses template text, splitting omission units on `marker`.
    pub fn parse(source: &str, marker: &str) -> Result<Self, TemplateError> {
        let pieces: Vec<&str> = if marker.is_empty() {
            vec![source]
        } else {
            source.split(marker).collect()
        };
        let units = pieces
            .iter()
            .map(|piece| parse_unit(piece))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(PromptTemplate { units })
    }

    pub fn from_file(path: &Path, marker: &str) -> Result<Self, TemplateError> {
        let source = std::fs::read_to_string(path).map_err(|e| TemplateError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&source, marker)
    }

    /// Every placeholder name referenced anywhere in the template.
    pub fn placeholder_names(&self) -> BTreeSet<&str> {
        self.units.iter().flat_map(|u| u.placeholders()).collect()
    }

    /// Checks that every placeholder is a known attribute or one of the
    /// special names.
    pub fn validate(&self, known_attributes: &BTreeSet<&str>) -> Result<(), TemplateError> {
        for name in self.placeholder_names() {
            if name != QUESTION_PLACEHOLDER
                && name != RESPONSE_OPTIONS_PLACEHOLDER
                && !known_attributes.contains(name)
            {
                return Err(TemplateError::UnknownPlaceholder(name.to_string()));
            }
        }
        Ok(())
    }

    /// Renders the template for one respondent.
    ///
    /// Units whose attribute placeholders are missing on the respondent are
    /// dropped whole; kept units are concatenated verbatim. Placeholders
    /// that name neither an attribute of the schema nor a special name are
    /// an error.
    pub fn render(
        &self,
        respondent: &Respondent,
        known_attributes: &BTreeSet<&str>,
        question_text: &str,
        response_options: &str,
    ) -> Result<String, TemplateError> {
        let mut out = String::new();
        for unit in &self.units {
            let mut dropped = false;
            for name in unit.placeholders() {
                if name == QUESTION_PLACEHOLDER || name == RESPONSE_OPTIONS_PLACEHOLDER {
                    continue;
                }
                if !known_attributes.contains(name) {
                    return Err(TemplateError::UnknownPlaceholder(name.to_string()));
                }
                if respondent.attribute(name).is_none() {
                    dropped = true;
                    break;
                }
            }
            if dropped {
                continue;
            }
            for segment in &unit.segments {
                match segment {
                    Segment::Literal(text) => out.push_str(text),
                    Segment::Placeholder(name) => {
                        if name == QUESTION_PLACEHOLDER {
                            out.push_str(question_text);
                        } else if name == RESPONSE_OPTIONS_PLACEHOLDER {
                            out.push_str(response_options);
                        } else {
                            out.push_str(respondent.attribute(name).expect("checked above"));
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

fn parse_unit(piece: &str) -> Result<Unit, TemplateError> {
    let mut segments = Vec::new();
    let mut literal = String::new();
    let mut chars = piece.char_indices().peekable();
    while let Some((at, c)) = chars.next() {
        if c == '{' {
            let mut name = String::new();
            let mut closed = false;
            for (_, c2) in chars.by_ref() {
                if c2 == '}' {
                    closed = true;
                    break;
                }
                if c2 == '{' {
                    return Err(TemplateError::UnbalancedBraces(at));
                }
                name.push(c2);
            }
            if !closed {
                return Err(TemplateError::UnbalancedBraces(at));
            }
            if !literal.is_empty() {
                segments.push(Segment::Literal(std::mem::take(&mut literal)));
            }
            segments.push(Segment::Placeholder(name));
        } else if c == '}' {
            return Err(TemplateError::UnbalancedBraces(at));
        } else {
            literal.push(c);
        }
    }
    if !literal.is_empty() {
        segments.push(Segment::Literal(literal));
    }
    Ok(Unit { segments })
}

/// The templates needed to prompt one dataset in one language.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    pub user: PromptTemplate,
    pub language: Language,
}

impl TemplateSet {
    pub fn new(user: PromptTemplate, language: Language) -> Self {
        TemplateSet { user, language }
    }
}
