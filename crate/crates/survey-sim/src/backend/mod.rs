//! The generation contract every survey response generation method runs
//! against: request/result types, a capability descriptor, an HTTP
//! implementation speaking an OpenAI-style chat-completions protocol with
//! guided-decoding extensions, and a scriptable deterministic mock.

pub mod http;
pub mod mock;

pub use http::{HttpBackend, HttpBackendConfig, SchemaStyle, ServerProfile};
pub use mock::{
    CallRecord, ConstraintKind, MockBackend, MockScript, RequestMatcher, ScriptedResponse,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Greedy decoding or temperature sampling with a fixed seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Decoding {
    Greedy,
    Sampled { temperature: f64, seed: u64 },
}

/// Decoding parameters of one generation call.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub decoding: Decoding,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_k: Option<u32>,
    pub max_tokens: u32,
}

impl SamplingParams {
    pub fn greedy(max_tokens: u32) -> Self {
        SamplingParams {
            decoding: Decoding::Greedy,
            top_k: None,
            max_tokens,
        }
    }

    pub fn sampled(temperature: f64, seed: u64, max_tokens: u32) -> Self {
        SamplingParams {
            decoding: Decoding::Sampled { temperature, seed },
            top_k: None,
            max_tokens,
        }
    }

    /// Greedy decoding is treated as temperature 0.
    pub fn temperature(&self) -> f64 {
        match self.decoding {
            Decoding::Greedy => 0.0,
            Decoding::Sampled { temperature, .. } => temperature,
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self.decoding {
            Decoding::Greedy => None,
            Decoding::Sampled { seed, .. } => Some(seed),
        }
    }
}

/// Output constraint of one generation call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GenerationConstraint {
    Unconstrained,
    /// The output must be exactly one of these strings.
    ChoiceSet {
        choices: Vec<String>,
    },
    /// The output must parse under this JSON schema document.
    JsonSchema {
        schema: serde_json::Value,
    },
}

impl GenerationConstraint {
    pub fn choice_set<I, S>(choices: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        GenerationConstraint::ChoiceSet {
            choices: choices.into_iter().map(Into::into).collect(),
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if let GenerationConstraint::ChoiceSet { choices } = self {
            if choices.is_empty() {
                return Err(BackendError::InvalidRequest("empty choice set".into()));
            }
            let unique: std::collections::BTreeSet<&String> = choices.iter().collect();
            if unique.len() != choices.len() {
                return Err(BackendError::InvalidRequest(
                    "duplicate entries in choice set".into(),
                ));
            }
        }
        Ok(())
    }
}

/// One generation call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub system_text: String,
    pub user_text: String,
    /// Text the assistant message is seeded with; generation continues
    /// after it. Used by the answer-prefix method.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assistant_prefill: Option<String>,
    pub constraint: GenerationConstraint,
    pub sampling: SamplingParams,
    /// When set, the backend returns the top-k alternatives for the first
    /// content token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprobs_top_k: Option<u32>,
    #[serde(default)]
    pub reasoning_enabled: bool,
}

impl GenerationRequest {
    /// Checks the request invariants against the backend capabilities.
    /// Failing here means no network call is made.
    pub fn validate(&self, caps: &BackendCapabilities) -> Result<(), BackendError> {
        self.constraint.validate()?;
        if self.assistant_prefill.is_some() && self.logprobs_top_k.is_none() {
            return Err(BackendError::InvalidRequest(
                "assistant_prefill requires logprobs_top_k".into(),
            ));
        }
        if self.assistant_prefill.is_some() && !caps.supports_prefill {
            return Err(BackendError::CapabilityUnsupported(
                "backend does not support assistant prefill".into(),
            ));
        }
        if let Some(k) = self.logprobs_top_k {
            if k == 0 {
                return Err(BackendError::InvalidRequest(
                    "logprobs_top_k must be positive".into(),
                ));
            }
            if k > caps.max_logprobs {
                return Err(BackendError::CapabilityUnsupported(format!(
                    "requested top-{k} logprobs, backend supports at most {}",
                    caps.max_logprobs
                )));
            }
        }
        match &self.constraint {
            GenerationConstraint::ChoiceSet { .. } if !caps.supports_choice_set => {
                return Err(BackendError::CapabilityUnsupported(
                    "backend does not support choice-set constraints".into(),
                ));
            }
            GenerationConstraint::JsonSchema { .. } if !caps.supports_json_schema => {
                return Err(BackendError::CapabilityUnsupported(
                    "backend does not support JSON schema constraints".into(),
                ));
            }
            _ => {}
        }
        Ok(())
    }
}

/// A token surface string (including any leading whitespace) and its log
/// probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub token: String,
    pub logprob: f64,
}

impl TokenLogprob {
    pub fn new(token: impl Into<String>, logprob: f64) -> Self {
        TokenLogprob {
            token: token.into(),
            logprob,
        }
    }

    pub fn probability(&self) -> f64 {
        self.logprob.exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

/// Result of one generation call. `text` is the content after any reasoning
/// segment and after any prefill; `first_content_token_logprobs` refers to
/// the first token after reasoning and after prefill.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_content_token_logprobs: Option<Vec<TokenLogprob>>,
    pub finish_reason: FinishReason,
}

/// What a backend instance can do. Stable per instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendCapabilities {
    pub supports_choice_set: bool,
    pub supports_json_schema: bool,
    pub supports_prefill: bool,
    pub max_logprobs: u32,
    pub supports_reasoning_toggle: bool,
}

impl BackendCapabilities {
    /// Everything on; used by the mock.
    pub fn full(max_logprobs: u32) -> Self {
        BackendCapabilities {
            supports_choice_set: true,
            supports_json_schema: true,
            supports_prefill: true,
            max_logprobs,
            supports_reasoning_toggle: true,
        }
    }
}

#[derive(Debug, Error)]
pub enum BackendError {
    /// Network-level failure; retryable.
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("request timed out: {0}")]
    Timeout(String),
    /// The request asks for something this backend cannot do. Terminal.
    #[error("capability unsupported: {0}")]
    CapabilityUnsupported(String),
    /// The server accepted the request but the output violates the
    /// constraint, or the server rejected the constraint. Terminal.
    #[error("constraint rejected: {0}")]
    ConstraintRejected(String),
    /// Malformed request or response body.
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Transport(_) | BackendError::Timeout(_))
    }
}

/// The generation contract. Implementations are shareable across workers;
/// every call is independent.
pub trait Backend: Send + Sync {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, BackendError>;
    fn capabilities(&self) -> BackendCapabilities;
}

/// Sanity of returned top-k logprobs: each probability in (0, 1], total
/// mass at most 1 plus a small rounding tolerance.
pub(crate) fn check_logprob_sanity(entries: &[TokenLogprob]) -> Result<(), BackendError> {
    let mut total = 0.0;
    for entry in entries {
        if entry.logprob > 1e-9 || !entry.logprob.is_finite() {
            return Err(BackendError::Protocol(format!(
                "token {:?} has positive logprob {}",
                entry.token, entry.logprob
            )));
        }
        total += entry.probability();
    }
    if total > 1.0 + 1e-6 {
        return Err(BackendError::Protocol(format!(
            "top-k token probabilities sum to {total}, exceeding 1"
        )));
    }
    Ok(())
}
