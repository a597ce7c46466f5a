//! Maps token surface strings to response options and aggregates token
//! probabilities into option distributions.
//!
//! A token counts for an option only when its normalized form is a prefix
//! of a surface form of that option and of no other option; tokens matching
//! more than one option are discarded.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::backend::TokenLogprob;
use crate::survey::PresentedScale;

/// Byte-level space markers emitted by common tokenizers.
const SPACE_MARKERS: [char; 3] = ['\u{0120}', '\u{2581}', '\u{010A}'];

/// Normalized surface forms per option id, built for one scale variant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OptionSurfaceIndex {
    surfaces: BTreeMap<String, BTreeSet<String>>,
}

impl OptionSurfaceIndex {
    pub fn from_presented(presented: &PresentedScale) -> Self {
        let surfaces = presented
            .surface_forms
            .iter()
            .map(|(option_id, forms)| {
                let normalized = forms
                    .iter()
                    .map(|form| normalize_token(form))
                    .filter(|form| !form.is_empty())
                    .collect();
                (option_id.clone(), normalized)
            })
            .collect();
        OptionSurfaceIndex { surfaces }
    }

    /// Builds an index directly from (option id, surface forms) pairs.
    pub fn from_surfaces<I, S>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (S, Vec<S>)>,
        S: Into<String>,
    {
        let surfaces = pairs
            .into_iter()
            .map(|(option_id, forms)| {
                let normalized = forms
                    .into_iter()
                    .map(|form| normalize_token(&form.into()))
                    .filter(|form| !form.is_empty())
                    .collect();
                (option_id.into(), normalized)
            })
            .collect();
        OptionSurfaceIndex { surfaces }
    }

    pub fn option_ids(&self) -> impl Iterator<Item = &str> {
        self.surfaces.keys().map(String::as_str)
    }
}

/// Strips leading whitespace and byte-level space markers, then case-folds.
/// The empty string is a legal result.
pub fn normalize_token(token: &str) -> String {
    token
        .trim_start_matches(|c: char| c.is_whitespace() || SPACE_MARKERS.contains(&c))
        .to_lowercase()
}

/// Outcome of matching one token against the surface index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TokenMatch {
    /// The token uniquely identifies this option.
    Option(String),
    /// The token prefixes surface forms of two or more options.
    Ambiguous,
    NoMatch,
}

/// Matches a token: the normalized token must be a non-empty prefix of a
/// surface form of exactly one option.
pub fn match_token(token: &str, index: &OptionSurfaceIndex) -> TokenMatch {
    let normalized = normalize_token(token);
    if normalized.is_empty() {
        return TokenMatch::NoMatch;
    }
    let mut matched: Option<&str> = None;
    for (option_id, surfaces) in &index.surfaces {
        if surfaces.iter().any(|s| s.starts_with(&normalized)) {
            match matched {
                None => matched = Some(option_id),
                Some(prev) if prev != option_id => return TokenMatch::Ambiguous,
                Some(_) => {}
            }
        }
    }
    match matched {
        Some(option_id) => TokenMatch::Option(option_id.to_string()),
        None => TokenMatch::NoMatch,
    }
}

/// Whether a distribution covers all options, only some, or none.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Validity {
    Full,
    Partial,
    Invalid,
}

/// Aggregates first-token logprobs into an option distribution.
///
/// Probabilities of tokens matched to the same option are added up;
/// ambiguous and unmatched tokens contribute nothing. The distribution is
/// renormalized over the matched mass. Invalid when nothing matched,
/// partial when at least one option ends up with zero mass.
pub fn aggregate_first_token(
    logprobs: &[TokenLogprob],
    index: &OptionSurfaceIndex,
) -> (BTreeMap<String, f64>, Validity) {
    let mut mass: BTreeMap<String, f64> =
        index.option_ids().map(|id| (id.to_string(), 0.0)).collect();
    let mut matched_mass = 0.0;
    for entry in logprobs {
        if let TokenMatch::Option(option_id) = match_token(&entry.token, index) {
            let p = entry.probability();
            *mass.get_mut(&option_id).expect("index option") += p;
            matched_mass += p;
        }
    }
    if matched_mass <= 0.0 {
        return (BTreeMap::new(), Validity::Invalid);
    }
    let mut any_zero = false;
    for value in mass.values_mut() {
        if *value == 0.0 {
            any_zero = true;
        } else {
            *value /= matched_mass;
        }
    }
    let validity = if any_zero {
        Validity::Partial
    } else {
        Validity::Full
    };
    (mass, validity)
}
