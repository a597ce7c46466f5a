//! Pre-planned mock behaviors that exercise the full prompt path.
//!
//! The plans pre-render every prompt a grid will issue and register exact
//! (system, user) rules on a [`MockBackend`], so end-to-end runs flow
//! through the same rendering and parsing code as live runs.

use std::collections::BTreeSet;

use serde_json::{Map, Value};

use crate::backend::{MockBackend, MockScript, RequestMatcher, ScriptedResponse, TokenLogprob};
use crate::survey::prompts::{
    classification_user_prompt, render_prompts, system_prompt, SystemPromptKind,
};
use crate::survey::{render_scale, Dataset, ScaleVariant, TemplateSet};

use super::{answer_key, reasoning_key, MethodId};

/// A response that no method can map to a response option: nonsense text,
/// nonsense token alternatives.
pub fn garbage_response() -> ScriptedResponse {
    ScriptedResponse::text("qqq zzz nonsense").with_logprobs(vec![
        TokenLogprob::new("qqq", (0.6f64).ln()),
        TokenLogprob::new("zzz", (0.4f64).ln()),
    ])
}

/// A mock that answers everything with garbage. Constrained requests fail
/// as constraint rejections; unconstrained ones parse to invalid.
pub fn garbage_mock() -> MockBackend {
    MockBackend::new(MockScript::new().rule(RequestMatcher::Any, garbage_response()))
}

/// A mock scripted to answer every prompt of the grid with the
/// respondent's ground truth, in whatever format the method expects.
pub fn echo_ground_truth_mock(
    dataset: &Dataset,
    templates: &TemplateSet,
    methods: &[MethodId],
    variants: &[ScaleVariant],
) -> MockBackend {
    plan_mock(dataset, templates, methods, variants, &BTreeSet::new())
}

/// Like [`echo_ground_truth_mock`], but the respondents in `garbage_ids`
/// get garbage responses instead, producing a controlled invalid fraction.
pub fn mixed_mock(
    dataset: &Dataset,
    templates: &TemplateSet,
    methods: &[MethodId],
    variants: &[ScaleVariant],
    garbage_ids: &BTreeSet<String>,
) -> MockBackend {
    plan_mock(dataset, templates, methods, variants, garbage_ids)
}

fn plan_mock(
    dataset: &Dataset,
    templates: &TemplateSet,
    methods: &[MethodId],
    variants: &[ScaleVariant],
    garbage_ids: &BTreeSet<String>,
) -> MockBackend {
    let mut script = MockScript::new().strict();
    for question in &dataset.questions {
        let language = question.language;
        let a_key = answer_key(language);
        let r_key = reasoning_key(language);
        for &variant in variants {
            let presented = render_scale(question, variant);
            for respondent in &dataset.respondents {
                let Some(truth) = respondent.truth(&question.id) else {
                    continue;
                };
                let truth_entry = presented
                    .entry_for(truth)
                    .expect("ground truth is a valid option");
                let label = truth_entry.label.clone();
                let full_text = truth_entry.full_text.clone();
                let garbage = garbage_ids.contains(&respondent.id);

                for &method in methods {
                    let bundle = render_prompts(
                        templates,
                        &dataset.schema,
                        respondent,
                        question,
                        &presented,
                        variant,
                        method,
                    )
                    .expect("fixture prompts render");

                    let response = if garbage {
                        garbage_response()
                    } else {
                        match method {
                            // The full text uniquely identifies the option
                            // under every variant; a bare index letter can
                            // be an ambiguous prefix (e.g. "C" vs
                            // "Clinton").
                            MethodId::FirstTokenProbabilities
                            | MethodId::FirstTokenRestricted
                            | MethodId::AnswerPrefix => ScriptedResponse::text(full_text.clone())
                                .with_logprobs(vec![TokenLogprob::new(full_text.clone(), 0.0)]),
                            MethodId::RestrictedChoice => {
                                ScriptedResponse::text(choice_json(a_key, &label))
                            }
                            MethodId::RestrictedReasoning => {
                                ScriptedResponse::text(reasoning_json(r_key, a_key, &label))
                            }
                            MethodId::VerbalizedDistribution => {
                                ScriptedResponse::text(one_hot_json(&presented, &label))
                            }
                            MethodId::OpenEndedClassification | MethodId::OpenEndedDistribution => {
                                ScriptedResponse::text(open_statement(&full_text))
                            }
                        }
                    };
                    script.insert_exact(&bundle.system_text, &bundle.user_text, response);

                    // The open methods need their second, classification
                    // step scripted against the statement produced (or the
                    // garbage text) in step 1.
                    if method.is_open_generation() {
                        let statement = if garbage {
                            garbage_response().text
                        } else {
                            open_statement(&full_text)
                        };
                        let (kind, answer) = match method {
                            MethodId::OpenEndedClassification => {
                                (SystemPromptKind::ClassifyChoice, choice_json(a_key, &label))
                            }
                            _ => (
                                SystemPromptKind::ClassifyDistribution,
                                one_hot_json(&presented, &label),
                            ),
                        };
                        let classify_system = system_prompt(
                            kind,
                            language,
                            &question.text,
                            &presented,
                            variant.labeling,
                        );
                        let classify_user = classification_user_prompt(
                            language,
                            &question.text,
                            &presented,
                            variant.labeling,
                            &statement,
                        );
                        let classify_response = if garbage {
                            garbage_response()
                        } else {
                            ScriptedResponse::text(answer)
                        };
                        script.insert_exact(classify_system, classify_user, classify_response);
                    }
                }
            }
        }
    }
    MockBackend::new(script)
}

fn open_statement(full_text: &str) -> String {
    format!("Given everything about me, I would answer: {full_text}.")
}

fn choice_json(answer_key: &str, label: &str) -> String {
    serde_json::json!({ answer_key: label }).to_string()
}

fn reasoning_json(reasoning_key: &str, answer_key: &str, label: &str) -> String {
    let mut object = Map::new();
    object.insert(
        reasoning_key.to_string(),
        Value::String("Considering the persona, this option fits best.".into()),
    );
    object.insert(answer_key.to_string(), Value::String(label.to_string()));
    Value::Object(object).to_string()
}

fn one_hot_json(presented: &crate::survey::PresentedScale, truth_label: &str) -> String {
    let mut object = Map::new();
    for entry in &presented.entries {
        let p = if entry.label == truth_label { 1.0 } else { 0.0 };
        object.insert(entry.label.clone(), serde_json::json!(p));
    }
    Value::Object(object).to_string()
}
