//! Parsing of restricted-format model output back into predictions.
//!
//! Extraction tolerates markdown code fences and surrounding prose: the
//! first syntactically complete JSON object in the text is used.

use std::collections::BTreeMap;

use serde_json::Value;

use crate::survey::{Language, PresentedScale};

use super::{answer_key, Coverage, IndividualPrediction, Prediction};

/// Finds and parses the first complete JSON object in `text`.
pub fn extract_first_json_object(text: &str) -> Option<Value> {
    let starts = text
        .char_indices()
        .filter(|&(_, c)| c == '{')
        .map(|(i, _)| i);
    for start in starts {
        if let Some(end) = find_balanced_end(&text[start..]) {
            if let Ok(value) = serde_json::from_str::<Value>(&text[start..start + end]) {
                if value.is_object() {
                    return Some(value);
                }
            }
        }
    }
    None
}

/// Byte length of the balanced object starting at the first byte of `s`
/// (which must be `{`), respecting JSON string escapes.
fn find_balanced_end(s: &str) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (idx, c) in s.char_indices() {
        if in_string {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_string = false;
            }
            continue;
        }
        match c {
            '"' => in_string = true,
            '{' => depth += 1,
            '}' => {
                depth = depth.saturating_sub(1);
                if depth == 0 {
                    return Some(idx + c.len_utf8());
                }
            }
            _ => {}
        }
    }
    None
}

fn normalize_surface(s: &str) -> String {
    s.trim().to_lowercase()
}

/// Maps an answer surface string to its option id under the presented
/// scale; `None` when the surface is unknown or ambiguous.
fn surface_to_option(surface: &str, presented: &PresentedScale) -> Option<String> {
    let needle = normalize_surface(surface);
    if needle.is_empty() {
        return None;
    }
    let mut matched: Option<&str> = None;
    for (option_id, forms) in &presented.surface_forms {
        if forms.iter().any(|f| normalize_surface(f) == needle) {
            match matched {
                None => matched = Some(option_id),
                Some(prev) if prev != option_id => return None,
                Some(_) => {}
            }
        }
    }
    matched.map(str::to_string)
}

/// Parses a restricted-choice output: the answer field of the first JSON
/// object, mapped to an option id. Unparseable text or an unknown surface
/// yields an invalid prediction.
pub fn parse_choice(
    text: &str,
    presented: &PresentedScale,
    language: Language,
) -> IndividualPrediction {
    let Some(value) = extract_first_json_object(text) else {
        return IndividualPrediction::invalid(text);
    };
    let Some(answer) = value.get(answer_key(language)).and_then(Value::as_str) else {
        return IndividualPrediction::invalid(text);
    };
    match surface_to_option(answer, presented) {
        Some(option_id) => IndividualPrediction {
            prediction: Prediction::Choice { option_id },
            raw_output: text.to_string(),
            reasoning_text: None,
        },
        None => IndividualPrediction::invalid(text),
    }
}

/// Parses a verbalized-distribution output: one numeric value per option
/// surface. Missing options are filled with zero and marked partial; the
/// values are renormalized to sum 1. Negative or non-numeric values, or an
/// all-zero vector, yield an invalid prediction.
pub fn parse_distribution(text: &str, presented: &PresentedScale) -> IndividualPrediction {
    let Some(value) = extract_first_json_object(text) else {
        return IndividualPrediction::invalid(text);
    };
    let Some(object) = value.as_object() else {
        return IndividualPrediction::invalid(text);
    };

    let normalized_entries: Vec<(String, &Value)> = object
        .iter()
        .map(|(k, v)| (normalize_surface(k), v))
        .collect();

    let mut probabilities = BTreeMap::new();
    let mut coverage = Coverage::Full;
    let mut sum = 0.0;
    for entry in &presented.entries {
        let forms = presented
            .surface_forms
            .get(&entry.option_id)
            .expect("presented option");
        let found = normalized_entries
            .iter()
            .find(|(key, _)| forms.iter().any(|f| normalize_surface(f) == *key));
        match found {
            Some((_, raw)) => {
                let Some(number) = numeric_value(raw) else {
                    return IndividualPrediction::invalid(text);
                };
                if number < 0.0 || !number.is_finite() {
                    return IndividualPrediction::invalid(text);
                }
                probabilities.insert(entry.option_id.clone(), number);
                sum += number;
            }
            None => {
                probabilities.insert(entry.option_id.clone(), 0.0);
                coverage = Coverage::Partial;
            }
        }
    }
    if sum <= 0.0 {
        return IndividualPrediction::invalid(text);
    }
    for value in probabilities.values_mut() {
        *value /= sum;
    }
    IndividualPrediction {
        prediction: Prediction::Distribution {
            probabilities,
            coverage,
        },
        raw_output: text.to_string(),
        reasoning_text: None,
    }
}

fn numeric_value(value: &Value) -> Option<f64> {
    match value {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse::<f64>().ok(),
        _ => None,
    }
}

/// The most probable option, ties broken by presentation order, so the
/// derived choice of a stored distribution is reproducible.
pub fn argmax_option(
    probabilities: &BTreeMap<String, f64>,
    presented: &PresentedScale,
) -> Option<String> {
    let mut best: Option<(&str, f64)> = None;
    for entry in &presented.entries {
        let p = probabilities.get(&entry.option_id).copied().unwrap_or(0.0);
        match best {
            None => best = Some((&entry.option_id, p)),
            Some((_, best_p)) if p > best_p => best = Some((&entry.option_id, p)),
            Some(_) => {}
        }
    }
    match best {
        Some((option_id, p)) if p > 0.0 => Some(option_id.to_string()),
        _ => None,
    }
}
