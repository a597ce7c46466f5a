//! Dispatch of the eight methods over the backend contract.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use crate::backend::{
    Backend, BackendError, Decoding, FinishReason, GenerationConstraint, GenerationRequest,
    GenerationResult, SamplingParams,
};
use crate::survey::prompts::{
    classification_user_prompt, render_prompts, system_prompt, SystemPromptKind,
};
use crate::survey::{
    render_scale, PresentedScale, Respondent, ScaleVariant, Schema, SurveyQuestion, TemplateSet,
};
use crate::token_map::{aggregate_first_token, OptionSurfaceIndex, Validity};

use super::{
    build_choice_schema, build_distribution_schema, build_reasoning_schema, parse_choice,
    parse_distribution, Coverage, IndividualPrediction, MethodId, Prediction,
};

/// Cache of step-1 open-ended outputs, shared by both open generation
/// methods. Keyed by (dataset, model, respondent, question, variant,
/// decoding). The first caller computes; concurrent callers for the same
/// key wait for that result instead of issuing a second backend call.
/// Failures are not cached, so a later caller retries.
#[derive(Default)]
pub struct OpenOutputCache {
    entries: Mutex<HashMap<String, Slot>>,
    changed: std::sync::Condvar,
}

#[derive(Clone)]
enum Slot {
    Pending,
    Ready(Arc<str>),
}

impl OpenOutputCache {
    pub fn new() -> Self {
        OpenOutputCache::default()
    }

    fn get_or_compute<F>(&self, key: &str, compute: F) -> Result<Arc<str>, BackendError>
    where
        F: FnOnce() -> Result<String, BackendError>,
    {
        {
            let mut entries = self.entries.lock().unwrap();
            loop {
                match entries.get(key) {
                    Some(Slot::Ready(text)) => return Ok(text.clone()),
                    Some(Slot::Pending) => {
                        entries = self.changed.wait(entries).unwrap();
                    }
                    None => {
                        entries.insert(key.to_string(), Slot::Pending);
                        break;
                    }
                }
            }
        }
        let result = compute();
        let mut entries = self.entries.lock().unwrap();
        let out = match result {
            Ok(text) => {
                let arc: Arc<str> = Arc::from(text.as_str());
                entries.insert(key.to_string(), Slot::Ready(arc.clone()));
                Ok(arc)
            }
            Err(e) => {
                entries.remove(key);
                Err(e)
            }
        };
        self.changed.notify_all();
        drop(entries);
        out
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.lock().unwrap().is_empty()
    }
}

/// Everything one method run needs.
pub struct RunContext<'a> {
    pub backend: &'a dyn Backend,
    pub templates: &'a TemplateSet,
    pub schema: &'a Schema,
    pub dataset_id: &'a str,
    pub model_id: &'a str,
    pub question: &'a SurveyQuestion,
    pub respondent: &'a Respondent,
    pub variant: ScaleVariant,
    /// Sampling of the primary generation call.
    pub sampling: SamplingParams,
    /// Model default temperature, used for the classification step of the
    /// open methods.
    pub default_temperature: f64,
    /// Seed derived from (spec, respondent), used where a sampled call is
    /// needed under a greedy spec.
    pub derived_seed: u64,
    pub logprobs_top_k: u32,
    pub open_max_tokens: u32,
    pub reasoning_enabled: bool,
    pub open_cache: &'a OpenOutputCache,
}

/// Result of one method run: the parsed prediction plus run bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodOutcome {
    pub prediction: IndividualPrediction,
    pub finish_reason: FinishReason,
    pub error: Option<String>,
    /// True when a schema-constrained method ran instruction-only because
    /// the backend lacks schema support.
    pub degraded: bool,
    pub elapsed_ms: u64,
}

impl MethodOutcome {
    fn failed(error: BackendError, elapsed_ms: u64) -> Self {
        MethodOutcome {
            prediction: IndividualPrediction::invalid(""),
            finish_reason: FinishReason::Error,
            error: Some(error.to_string()),
            degraded: false,
            elapsed_ms,
        }
    }
}

/// Runs one method for one respondent. Backend errors never panic or
/// propagate; they come back as an invalid prediction with the error
/// message attached, so every grid cell yields exactly one record.
pub fn run_method(method: MethodId, ctx: &RunContext) -> MethodOutcome {
    let started = Instant::now();
    let presented = render_scale(ctx.question, ctx.variant);
    let elapsed = |t: Instant| t.elapsed().as_millis() as u64;

    let bundle = match render_prompts(
        ctx.templates,
        ctx.schema,
        ctx.respondent,
        ctx.question,
        &presented,
        ctx.variant,
        method,
    ) {
        Ok(bundle) => bundle,
        Err(e) => {
            return MethodOutcome::failed(
                BackendError::InvalidRequest(format!("prompt rendering failed: {e}")),
                elapsed(started),
            );
        }
    };

    let caps = ctx.backend.capabilities();
    let mut degraded = false;
    let outcome = match method {
        MethodId::FirstTokenProbabilities => token_method(
            ctx,
            &presented,
            bundle.system_text,
            bundle.user_text,
            None,
            GenerationConstraint::Unconstrained,
        ),
        MethodId::FirstTokenRestricted => token_method(
            ctx,
            &presented,
            bundle.system_text,
            bundle.user_text,
            None,
            GenerationConstraint::choice_set(presented.all_surface_forms()),
        ),
        MethodId::AnswerPrefix => token_method(
            ctx,
            &presented,
            bundle.system_text,
            bundle.user_text,
            bundle.assistant_prefill,
            GenerationConstraint::choice_set(presented.all_surface_forms()),
        ),
        MethodId::RestrictedChoice => {
            let schema = build_choice_schema(&presented, ctx.question.language);
            let constraint = schema_constraint(schema, caps.supports_json_schema, &mut degraded);
            restricted_method(
                ctx,
                &presented,
                bundle.system_text,
                bundle.user_text,
                constraint,
                ClassifyMode::Choice,
            )
        }
        MethodId::RestrictedReasoning => {
            let schema = build_reasoning_schema(&presented, ctx.question.language);
            let constraint = schema_constraint(schema, caps.supports_json_schema, &mut degraded);
            restricted_method(
                ctx,
                &presented,
                bundle.system_text,
                bundle.user_text,
                constraint,
                ClassifyMode::Choice,
            )
        }
        MethodId::VerbalizedDistribution => {
            let schema = build_distribution_schema(&presented);
            let constraint = schema_constraint(schema, caps.supports_json_schema, &mut degraded);
            restricted_method(
                ctx,
                &presented,
                bundle.system_text,
                bundle.user_text,
                constraint,
                ClassifyMode::Distribution,
            )
        }
        MethodId::OpenEndedClassification => open_method(
            ctx,
            &presented,
            &bundle.user_text,
            ClassifyMode::Choice,
            &mut degraded,
        ),
        MethodId::OpenEndedDistribution => open_method(
            ctx,
            &presented,
            &bundle.user_text,
            ClassifyMode::Distribution,
            &mut degraded,
        ),
    };

    match outcome {
        Ok((prediction, finish_reason)) => MethodOutcome {
            prediction,
            finish_reason,
            error: None,
            degraded,
            elapsed_ms: elapsed(started),
        },
        Err(e) => {
            let mut failed = MethodOutcome::failed(e, elapsed(started));
            failed.degraded = degraded;
            failed
        }
    }
}

/// Which restricted format the classification step uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassifyMode {
    Choice,
    Distribution,
}

fn schema_constraint(
    schema: serde_json::Value,
    supported: bool,
    degraded: &mut bool,
) -> GenerationConstraint {
    if supported {
        GenerationConstraint::JsonSchema { schema }
    } else {
        // Instruction-only fallback: the format instructions stay in the
        // system prompt, the run is flagged as degraded.
        *degraded = true;
        GenerationConstraint::Unconstrained
    }
}

fn token_method(
    ctx: &RunContext,
    presented: &PresentedScale,
    system_text: String,
    user_text: String,
    assistant_prefill: Option<String>,
    constraint: GenerationConstraint,
) -> Result<(IndividualPrediction, FinishReason), BackendError> {
    let request = GenerationRequest {
        system_text,
        user_text,
        assistant_prefill,
        constraint,
        sampling: ctx.sampling,
        logprobs_top_k: Some(ctx.logprobs_top_k),
        reasoning_enabled: ctx.reasoning_enabled,
    };
    let result = ctx.backend.generate(&request)?;
    let index = OptionSurfaceIndex::from_presented(presented);
    let logprobs = result
        .first_content_token_logprobs
        .as_deref()
        .unwrap_or(&[]);
    let (probabilities, validity) = aggregate_first_token(logprobs, &index);
    let prediction = match validity {
        Validity::Invalid => Prediction::Invalid,
        Validity::Full => Prediction::Distribution {
            probabilities,
            coverage: Coverage::Full,
        },
        Validity::Partial => Prediction::Distribution {
            probabilities,
            coverage: Coverage::Partial,
        },
    };
    Ok((
        IndividualPrediction {
            prediction,
            raw_output: result.text,
            reasoning_text: result.reasoning_text,
        },
        result.finish_reason,
    ))
}

fn restricted_method(
    ctx: &RunContext,
    presented: &PresentedScale,
    system_text: String,
    user_text: String,
    constraint: GenerationConstraint,
    mode: ClassifyMode,
) -> Result<(IndividualPrediction, FinishReason), BackendError> {
    let request = GenerationRequest {
        system_text,
        user_text,
        assistant_prefill: None,
        constraint,
        sampling: ctx.sampling,
        logprobs_top_k: None,
        reasoning_enabled: ctx.reasoning_enabled,
    };
    let result = ctx.backend.generate(&request)?;
    let mut prediction = match mode {
        ClassifyMode::Choice => parse_choice(&result.text, presented, ctx.question.language),
        ClassifyMode::Distribution => parse_distribution(&result.text, presented),
    };
    prediction.reasoning_text = result.reasoning_text.clone();
    Ok((prediction, result.finish_reason))
}

fn open_method(
    ctx: &RunContext,
    presented: &PresentedScale,
    persona_user_text: &str,
    mode: ClassifyMode,
    degraded: &mut bool,
) -> Result<(IndividualPrediction, FinishReason), BackendError> {
    let open_text = open_step(ctx, persona_user_text)?;
    let outcome = classify_open(ctx, presented, &open_text, mode)?;
    *degraded = outcome.degraded;
    Ok((outcome.prediction, outcome.finish_reason))
}

fn open_cache_key(ctx: &RunContext) -> String {
    let decoding = match ctx.sampling.decoding {
        Decoding::Greedy => "greedy".to_string(),
        Decoding::Sampled { temperature, seed } => {
            format!("t{:x}-s{seed}", temperature.to_bits())
        }
    };
    format!(
        "{}|{}|{}|{}|{}|{}",
        ctx.dataset_id,
        ctx.model_id,
        ctx.respondent.id,
        ctx.question.id,
        ctx.variant.key(),
        decoding
    )
}

/// Step 1 of the open generation methods: one unconstrained open-ended
/// response per simulation cell, cached so both open methods classify the
/// same output. Temperature scaling applies here; the classification step
/// keeps the model default.
pub fn open_step(ctx: &RunContext, persona_user_text: &str) -> Result<Arc<str>, BackendError> {
    let key = open_cache_key(ctx);
    ctx.open_cache.get_or_compute(&key, || {
        let system_text = system_prompt(
            SystemPromptKind::OpenGeneration,
            ctx.question.language,
            &ctx.question.text,
            &render_scale(ctx.question, ctx.variant),
            ctx.variant.labeling,
        );
        let mut sampling = ctx.sampling;
        sampling.max_tokens = ctx.open_max_tokens;
        let request = GenerationRequest {
            system_text,
            user_text: persona_user_text.to_string(),
            assistant_prefill: None,
            constraint: GenerationConstraint::Unconstrained,
            sampling,
            logprobs_top_k: None,
            reasoning_enabled: ctx.reasoning_enabled,
        };
        let result: GenerationResult = ctx.backend.generate(&request)?;
        Ok(result.text)
    })
}

/// Outcome of the classification step.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifyOutcome {
    pub prediction: IndividualPrediction,
    pub finish_reason: FinishReason,
    pub degraded: bool,
}

/// Step 2 of the open generation methods: the same model classifies the
/// open-ended statement under the matching restricted format, at its
/// default temperature. Empty statements are skipped and recorded invalid.
pub fn classify_open(
    ctx: &RunContext,
    presented: &PresentedScale,
    open_text: &str,
    mode: ClassifyMode,
) -> Result<ClassifyOutcome, BackendError> {
    if open_text.trim().is_empty() {
        return Ok(ClassifyOutcome {
            prediction: IndividualPrediction::invalid(open_text),
            finish_reason: FinishReason::Stop,
            degraded: false,
        });
    }
    let mut degraded = false;
    let caps = ctx.backend.capabilities();
    let language = ctx.question.language;
    let (kind, schema) = match mode {
        ClassifyMode::Choice => (
            SystemPromptKind::ClassifyChoice,
            build_choice_schema(presented, language),
        ),
        ClassifyMode::Distribution => (
            SystemPromptKind::ClassifyDistribution,
            build_distribution_schema(presented),
        ),
    };
    let system_text = system_prompt(
        kind,
        language,
        &ctx.question.text,
        presented,
        ctx.variant.labeling,
    );
    let user_text = classification_user_prompt(
        language,
        &ctx.question.text,
        presented,
        ctx.variant.labeling,
        open_text,
    );
    let constraint = schema_constraint(schema, caps.supports_json_schema, &mut degraded);
    let seed = ctx.sampling.seed().unwrap_or(ctx.derived_seed);
    let request = GenerationRequest {
        system_text,
        user_text,
        assistant_prefill: None,
        constraint,
        sampling: SamplingParams {
            decoding: Decoding::Sampled {
                temperature: ctx.default_temperature,
                seed,
            },
            top_k: ctx.sampling.top_k,
            max_tokens: ctx.sampling.max_tokens,
        },
        logprobs_top_k: None,
        reasoning_enabled: ctx.reasoning_enabled,
    };
    let result = ctx.backend.generate(&request)?;
    let mut prediction = match mode {
        ClassifyMode::Choice => parse_choice(&result.text, presented, language),
        ClassifyMode::Distribution => parse_distribution(&result.text, presented),
    };
    prediction.reasoning_text = result.reasoning_text.clone();
    Ok(ClassifyOutcome {
        prediction,
        finish_reason: result.finish_reason,
        degraded,
    })
}
