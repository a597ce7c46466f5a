//! HTTP backend speaking an OpenAI-style chat-completions protocol.
//!
//! Guided-decoding fields differ between server dialects, so the exact
//! field names live in a [`ServerProfile`]; profiles for vLLM-style and
//! OpenAI-style servers are built in.

use std::collections::BTreeMap;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde_json::{json, Value};

use super::{
    Backend, BackendCapabilities, BackendError, FinishReason, GenerationConstraint,
    GenerationRequest, GenerationResult, TokenLogprob,
};

/// How a JSON-schema constraint is expressed on the wire.
#[derive(Debug, Clone, PartialEq)]
pub enum SchemaStyle {
    /// Schema document under a top-level field, e.g. vLLM's `guided_json`.
    GuidedJson(String),
    /// OpenAI `response_format: {type: "json_schema", ...}`.
    ResponseFormat,
    Unsupported,
}

/// Wire dialect of one server: guided-decoding field names, reasoning
/// handling, and prefill support.
#[derive(Debug, Clone, PartialEq)]
pub struct ServerProfile {
    pub name: String,
    /// Field carrying a choice-set constraint, e.g. `guided_choice`.
    pub choice_field: Option<String>,
    pub schema_style: SchemaStyle,
    /// Field carrying top-k sampling, when the dialect has one.
    pub top_k_field: Option<String>,
    /// Response message field with the reasoning segment, e.g.
    /// `reasoning_content`.
    pub reasoning_field: Option<String>,
    /// Open/close marker pair delimiting an inline reasoning segment,
    /// scanned once left to right when the dedicated field is absent.
    pub reasoning_markers: Option<(String, String)>,
    pub supports_prefill: bool,
    /// Extra body fields required to continue an assistant prefill.
    pub prefill_extra_fields: BTreeMap<String, Value>,
    /// Extra body fields to disable reasoning output, when supported.
    pub reasoning_off_fields: Option<BTreeMap<String, Value>>,
    pub max_logprobs: u32,
}

impl ServerProfile {
    /// vLLM-style dialect: guided decoding extensions, prefill
    /// continuation, dedicated reasoning field plus `<think>` markers.
    pub fn vllm() -> Self {
        ServerProfile {
            name: "vllm".into(),
            choice_field: Some("guided_choice".into()),
            schema_style: SchemaStyle::GuidedJson("guided_json".into()),
            top_k_field: Some("top_k".into()),
            reasoning_field: Some("reasoning_content".into()),
            reasoning_markers: Some(("<think>".into(), "</think>".into())),
            supports_prefill: true,
            prefill_extra_fields: BTreeMap::from([
                ("continue_final_message".into(), json!(true)),
                ("add_generation_prompt".into(), json!(false)),
            ]),
            reasoning_off_fields: Some(BTreeMap::from([(
                "chat_template_kwargs".into(),
                json!({ "enable_thinking": false }),
            )])),
            max_logprobs: 20,
        }
    }

    /// Plain OpenAI dialect: schema via `response_format`, no choice sets,
    /// no prefill continuation.
    pub fn openai() -> Self {
        ServerProfile {
            name: "openai".into(),
            choice_field: None,
            schema_style: SchemaStyle::ResponseFormat,
            top_k_field: None,
            reasoning_field: None,
            reasoning_markers: None,
            supports_prefill: false,
            prefill_extra_fields: BTreeMap::new(),
            reasoning_off_fields: None,
            max_logprobs: 20,
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "vllm" => Some(Self::vllm()),
            "openai" => Some(Self::openai()),
            _ => None,
        }
    }

    pub fn capabilities(&self) -> BackendCapabilities {
        BackendCapabilities {
            supports_choice_set: self.choice_field.is_some(),
            supports_json_schema: self.schema_style != SchemaStyle::Unsupported,
            supports_prefill: self.supports_prefill,
            max_logprobs: self.max_logprobs,
            supports_reasoning_toggle: self.reasoning_off_fields.is_some(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct HttpBackendConfig {
    /// Full chat-completions URL, e.g. `http://localhost:8000/v1/chat/completions`.
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the API key; unset or empty means no
    /// auth header.
    pub api_key_env: Option<String>,
    pub profile: ServerProfile,
    pub timeout: Duration,
    /// Additional attempts after a retryable failure.
    pub retries: u32,
    pub retry_backoff: Duration,
    pub max_in_flight: usize,
}

impl HttpBackendConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        HttpBackendConfig {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key_env: None,
            profile: ServerProfile::vllm(),
            timeout: Duration::from_secs(120),
            retries: 2,
            retry_backoff: Duration::from_millis(250),
            max_in_flight: 8,
        }
    }
}

struct Semaphore {
    permits: Mutex<usize>,
    available: Condvar,
}

impl Semaphore {
    fn new(permits: usize) -> Self {
        Semaphore {
            permits: Mutex::new(permits.max(1)),
            available: Condvar::new(),
        }
    }

    fn acquire(&self) {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.available.wait(permits).unwrap();
        }
        *permits -= 1;
    }

    fn release(&self) {
        *self.permits.lock().unwrap() += 1;
        self.available.notify_one();
    }
}

/// Chat-completions client implementing the generation contract.
pub struct HttpBackend {
    config: HttpBackendConfig,
    client: reqwest::blocking::Client,
    in_flight: Semaphore,
}

impl HttpBackend {
    pub fn new(config: HttpBackendConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let in_flight = Semaphore::new(config.max_in_flight);
        Ok(HttpBackend {
            config,
            client,
            in_flight,
        })
    }

    fn post_with_retry(&self, body: &Value) -> Result<Value, BackendError> {
        let mut backoff = self.config.retry_backoff;
        let mut last_error = None;
        for attempt in 0..=self.config.retries {
            if attempt > 0 {
                std::thread::sleep(backoff);
                backoff *= 2;
            }
            match self.post_once(body) {
                Ok(value) => return Ok(value),
                Err(e) if e.is_retryable() => last_error = Some(e),
                Err(e) => return Err(e),
            }
        }
        Err(last_error.unwrap_or_else(|| BackendError::Transport("no attempts made".into())))
    }

    fn post_once(&self, body: &Value) -> Result<Value, BackendError> {
        let mut request = self.client.post(&self.config.endpoint).json(body);
        if let Some(var) = &self.config.api_key_env {
            if let Ok(key) = std::env::var(var) {
                if !key.is_empty() {
                    request = request.header("Authorization", format!("Bearer {key}"));
                }
            }
        }
        let response = request.send().map_err(|e| {
            if e.is_timeout() {
                BackendError::Timeout(e.to_string())
            } else {
                BackendError::Transport(e.to_string())
            }
        })?;
        let status = response.status();
        let text = response
            .text()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(BackendError::Transport(format!(
                "server returned {status}: {}",
                truncate(&text, 200)
            )));
        }
        if !status.is_success() {
            return Err(BackendError::Protocol(format!(
                "server returned {status}: {}",
                truncate(&text, 200)
            )));
        }
        serde_json::from_str(&text)
            .map_err(|e| BackendError::Protocol(format!("malformed response body: {e}")))
    }
}

impl Backend for HttpBackend {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, BackendError> {
        request.validate(&self.capabilities())?;
        if request.sampling.top_k.is_some() && self.config.profile.top_k_field.is_none() {
            return Err(BackendError::CapabilityUnsupported(format!(
                "profile {:?} cannot express top-k sampling",
                self.config.profile.name
            )));
        }
        let body = build_request_body(&self.config, request);
        self.in_flight.acquire();
        let result = self.post_with_retry(&body);
        self.in_flight.release();
        parse_response(&self.config.profile, request, &result?)
    }

    fn capabilities(&self) -> BackendCapabilities {
        self.config.profile.capabilities()
    }
}

/// Assembles the chat-completions request body for one generation call.
pub(crate) fn build_request_body(config: &HttpBackendConfig, request: &GenerationRequest) -> Value {
    let mut messages = vec![
        json!({ "role": "system", "content": request.system_text }),
        json!({ "role": "user", "content": request.user_text }),
    ];
    if let Some(prefill) = &request.assistant_prefill {
        messages.push(json!({ "role": "assistant", "content": prefill }));
    }

    let mut body = serde_json::Map::new();
    body.insert("model".into(), json!(config.model));
    body.insert("messages".into(), Value::Array(messages));
    body.insert("max_tokens".into(), json!(request.sampling.max_tokens));
    body.insert("temperature".into(), json!(request.sampling.temperature()));
    if let Some(seed) = request.sampling.seed() {
        body.insert("seed".into(), json!(seed));
    }
    if let (Some(top_k), Some(field)) = (request.sampling.top_k, &config.profile.top_k_field) {
        body.insert(field.clone(), json!(top_k));
    }
    if let Some(k) = request.logprobs_top_k {
        body.insert("logprobs".into(), json!(true));
        body.insert("top_logprobs".into(), json!(k));
    }
    match &request.constraint {
        GenerationConstraint::Unconstrained => {}
        GenerationConstraint::ChoiceSet { choices } => {
            if let Some(field) = &config.profile.choice_field {
                body.insert(field.clone(), json!(choices));
            }
        }
        GenerationConstraint::JsonSchema { schema } => match &config.profile.schema_style {
            SchemaStyle::GuidedJson(field) => {
                body.insert(field.clone(), schema.clone());
            }
            SchemaStyle::ResponseFormat => {
                body.insert(
                    "response_format".into(),
                    json!({
                        "type": "json_schema",
                        "json_schema": {
                            "name": "survey_response",
                            "schema": schema,
                            "strict": true
                        }
                    }),
                );
            }
            SchemaStyle::Unsupported => {}
        },
    }
    if request.assistant_prefill.is_some() {
        for (key, value) in &config.profile.prefill_extra_fields {
            body.insert(key.clone(), value.clone());
        }
    }
    if !request.reasoning_enabled {
        if let Some(fields) = &config.profile.reasoning_off_fields {
            for (key, value) in fields {
                body.insert(key.clone(), value.clone());
            }
        }
    }
    Value::Object(body)
}

/// Parses a chat-completions response into the generation contract:
/// separates the reasoning segment, strips any echoed prefill, and locates
/// the top-logprob entries of the first content token.
pub(crate) fn parse_response(
    profile: &ServerProfile,
    request: &GenerationRequest,
    response: &Value,
) -> Result<GenerationResult, BackendError> {
    let choice = response
        .get("choices")
        .and_then(Value::as_array)
        .and_then(|c| c.first())
        .ok_or_else(|| BackendError::Protocol("response has no choices".into()))?;
    let message = choice
        .get("message")
        .ok_or_else(|| BackendError::Protocol("choice has no message".into()))?;
    let raw_content = message
        .get("content")
        .and_then(Value::as_str)
        .unwrap_or("")
        .to_string();

    // Reasoning segment: dedicated field first, marker scan as fallback.
    let mut reasoning_text: Option<String> = None;
    let mut content = raw_content.clone();
    if let Some(field) = &profile.reasoning_field {
        if let Some(r) = message.get(field).and_then(Value::as_str) {
            if !r.is_empty() {
                reasoning_text = Some(r.to_string());
            }
        }
    }
    if reasoning_text.is_none() {
        if let Some((open, close)) = &profile.reasoning_markers {
            if let Some(open_at) = content.find(open.as_str()) {
                if let Some(close_rel) = content[open_at + open.len()..].find(close.as_str()) {
                    let reasoning_start = open_at + open.len();
                    let close_at = reasoning_start + close_rel;
                    let segment = content[reasoning_start..close_at].to_string();
                    let rest = content[close_at + close.len()..].trim_start().to_string();
                    reasoning_text = Some(segment);
                    content = rest;
                }
            }
        }
    }
    if let Some(prefill) = &request.assistant_prefill {
        if let Some(stripped) = content.strip_prefix(prefill.as_str()) {
            content = stripped.to_string();
        }
    }

    let first_content_token_logprobs = if request.logprobs_top_k.is_some() {
        let extracted = extract_first_content_logprobs(choice, &content);
        if let Some(entries) = &extracted {
            super::check_logprob_sanity(entries)?;
        }
        extracted
    } else {
        None
    };

    let finish_reason = match choice.get("finish_reason").and_then(Value::as_str) {
        Some("stop") => FinishReason::Stop,
        Some("length") => FinishReason::Length,
        _ => FinishReason::Error,
    };

    if let GenerationConstraint::ChoiceSet { choices } = &request.constraint {
        if !choices.iter().any(|c| c == content.trim()) {
            return Err(BackendError::ConstraintRejected(format!(
                "server output {:?} is not in the choice set",
                truncate(&content, 80)
            )));
        }
    }

    let reasoning_text = if request.reasoning_enabled {
        reasoning_text
    } else {
        None
    };

    Ok(GenerationResult {
        text: content,
        reasoning_text,
        first_content_token_logprobs,
        finish_reason,
    })
}

/// Finds the top-logprob entries of the first token that contributes to the
/// final content, i.e. the first token after any reasoning segment and any
/// echoed prefill.
fn extract_first_content_logprobs(choice: &Value, content: &str) -> Option<Vec<TokenLogprob>> {
    let entries = choice
        .get("logprobs")
        .and_then(|l| l.get("content"))
        .and_then(Value::as_array)?;
    if entries.is_empty() {
        return None;
    }
    // The generated stream may include reasoning/prefill bytes that were
    // stripped from `content`; everything before that boundary is skipped.
    let full_len: usize = entries
        .iter()
        .map(|e| e.get("token").and_then(Value::as_str).unwrap_or("").len())
        .sum();
    let boundary = full_len.saturating_sub(content.len());
    let mut offset = 0usize;
    for entry in entries {
        let token = entry.get("token").and_then(Value::as_str).unwrap_or("");
        let end = offset + token.len();
        if end > boundary && !token.is_empty() {
            let top = entry
                .get("top_logprobs")
                .and_then(Value::as_array)
                .map(|alts| {
                    alts.iter()
                        .filter_map(|alt| {
                            let token = alt.get("token")?.as_str()?.to_string();
                            let logprob = alt.get("logprob")?.as_f64()?;
                            Some(TokenLogprob { token, logprob })
                        })
                        .collect::<Vec<_>>()
                });
            return match top {
                Some(alts) if !alts.is_empty() => Some(alts),
                // Servers may omit alternatives; fall back to the sampled
                // token itself.
                _ => {
                    let logprob = entry.get("logprob").and_then(Value::as_f64)?;
                    Some(vec![TokenLogprob {
                        token: token.to_string(),
                        logprob,
                    }])
                }
            };
        }
        offset = end;
    }
    None
}

fn truncate(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((idx, _)) => &s[..idx],
        None => s,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::SamplingParams;

    fn request() -> GenerationRequest {
        GenerationRequest {
            system_text: "sys".into(),
            user_text: "user".into(),
            assistant_prefill: None,
            constraint: GenerationConstraint::Unconstrained,
            sampling: SamplingParams::sampled(0.7, 11, 64),
            logprobs_top_k: None,
            reasoning_enabled: false,
        }
    }

    fn config() -> HttpBackendConfig {
        HttpBackendConfig::new("http://localhost:1/v1/chat/completions", "test-model")
    }

    #[test]
    fn body_carries_sampling_and_messages() {
        let body = build_request_body(&config(), &request());
        assert_eq!(body["model"], "test-model");
        assert_eq!(body["temperature"], 0.7);
        assert_eq!(body["seed"], 11);
        assert_eq!(body["max_tokens"], 64);
        assert_eq!(body["messages"][0]["role"], "system");
        assert_eq!(body["messages"][1]["role"], "user");
        assert!(body.get("logprobs").is_none());
    }

    #[test]
    fn choice_set_maps_to_guided_field() {
        let mut req = request();
        req.constraint = GenerationConstraint::choice_set(["A", "B"]);
        let body = build_request_body(&config(), &req);
        assert_eq!(body["guided_choice"], serde_json::json!(["A", "B"]));
    }

    #[test]
    fn schema_maps_per_profile_dialect() {
        let schema = serde_json::json!({"type": "object"});
        let mut req = request();
        req.constraint = GenerationConstraint::JsonSchema {
            schema: schema.clone(),
        };
        let vllm_body = build_request_body(&config(), &req);
        assert_eq!(vllm_body["guided_json"], schema);

        let mut openai_config = config();
        openai_config.profile = ServerProfile::openai();
        let openai_body = build_request_body(&openai_config, &req);
        assert_eq!(openai_body["response_format"]["type"], "json_schema");
        assert_eq!(
            openai_body["response_format"]["json_schema"]["schema"],
            schema
        );
    }

    #[test]
    fn prefill_appends_assistant_message_and_extras() {
        let mut req = request();
        req.assistant_prefill = Some("My answer is ".into());
        req.logprobs_top_k = Some(5);
        let body = build_request_body(&config(), &req);
        assert_eq!(body["messages"][2]["role"], "assistant");
        assert_eq!(body["messages"][2]["content"], "My answer is ");
        assert_eq!(body["continue_final_message"], true);
        assert_eq!(body["add_generation_prompt"], false);
        assert_eq!(body["logprobs"], true);
        assert_eq!(body["top_logprobs"], 5);
    }

    #[test]
    fn reasoning_off_fields_included_when_disabled() {
        let body = build_request_body(&config(), &request());
        assert_eq!(body["chat_template_kwargs"]["enable_thinking"], false);
        let mut on = request();
        on.reasoning_enabled = true;
        let body_on = build_request_body(&config(), &on);
        assert!(body_on.get("chat_template_kwargs").is_none());
    }

    #[test]
    fn parses_plain_response() {
        let response = serde_json::json!({
            "choices": [{
                "message": { "content": "Trump" },
                "finish_reason": "stop"
            }]
        });
        let result = parse_response(&ServerProfile::vllm(), &request(), &response).unwrap();
        assert_eq!(result.text, "Trump");
        assert_eq!(result.finish_reason, FinishReason::Stop);
        assert_eq!(result.reasoning_text, None);
    }

    #[test]
    fn reasoning_field_separated_and_gated() {
        let response = serde_json::json!({
            "choices": [{
                "message": { "content": "Trump", "reasoning_content": "thinking..." },
                "finish_reason": "stop"
            }]
        });
        let mut req = request();
        req.reasoning_enabled = true;
        let result = parse_response(&ServerProfile::vllm(), &req, &response).unwrap();
        assert_eq!(result.text, "Trump");
        assert_eq!(result.reasoning_text.as_deref(), Some("thinking..."));
    }

    #[test]
    fn reasoning_markers_split_inline_segment() {
        let response = serde_json::json!({
            "choices": [{
                "message": { "content": "<think>hmm</think>\n\nTrump" },
                "finish_reason": "stop"
            }]
        });
        let mut req = request();
        req.reasoning_enabled = true;
        let result = parse_response(&ServerProfile::vllm(), &req, &response).unwrap();
        assert_eq!(result.text, "Trump");
        assert_eq!(result.reasoning_text.as_deref(), Some("hmm"));
    }

    #[test]
    fn first_content_logprobs_skip_reasoning_tokens() {
        let response = serde_json::json!({
            "choices": [{
                "message": { "content": "<think>hm</think>\n\nTrump" },
                "finish_reason": "stop",
                "logprobs": { "content": [
                    { "token": "<think>", "logprob": -0.1, "top_logprobs": [ { "token": "<think>", "logprob": -0.1 } ] },
                    { "token": "hm", "logprob": -0.2, "top_logprobs": [ { "token": "hm", "logprob": -0.2 } ] },
                    { "token": "</think>", "logprob": -0.3, "top_logprobs": [ { "token": "</think>", "logprob": -0.3 } ] },
                    { "token": "\n\n", "logprob": -0.4, "top_logprobs": [ { "token": "\n\n", "logprob": -0.4 } ] },
                    { "token": "Tru", "logprob": -0.5, "top_logprobs": [
                        { "token": "Tru", "logprob": -0.5 },
                        { "token": "Cl", "logprob": -1.5 }
                    ] },
                    { "token": "mp", "logprob": -0.6, "top_logprobs": [ { "token": "mp", "logprob": -0.6 } ] }
                ] }
            }]
        });
        let mut req = request();
        req.reasoning_enabled = true;
        req.logprobs_top_k = Some(5);
        let result = parse_response(&ServerProfile::vllm(), &req, &response).unwrap();
        let lps = result.first_content_token_logprobs.unwrap();
        assert_eq!(lps[0].token, "Tru");
        assert_eq!(lps.len(), 2);
    }

    #[test]
    fn first_content_logprobs_skip_echoed_prefill() {
        let response = serde_json::json!({
            "choices": [{
                "message": { "content": "My answer is Trump" },
                "finish_reason": "stop",
                "logprobs": { "content": [
                    { "token": "My", "logprob": -0.1, "top_logprobs": [ { "token": "My", "logprob": -0.1 } ] },
                    { "token": " answer", "logprob": -0.1, "top_logprobs": [ { "token": " answer", "logprob": -0.1 } ] },
                    { "token": " is", "logprob": -0.1, "top_logprobs": [ { "token": " is", "logprob": -0.1 } ] },
                    { "token": " Tru", "logprob": -0.2, "top_logprobs": [ { "token": " Tru", "logprob": -0.2 } ] },
                    { "token": "mp", "logprob": -0.3, "top_logprobs": [ { "token": "mp", "logprob": -0.3 } ] }
                ] }
            }]
        });
        let mut req = request();
        req.assistant_prefill = Some("My answer is ".into());
        req.logprobs_top_k = Some(5);
        let result = parse_response(&ServerProfile::vllm(), &req, &response).unwrap();
        assert_eq!(result.text, "Trump");
        let lps = result.first_content_token_logprobs.unwrap();
        assert_eq!(lps[0].token, " Tru");
    }

    #[test]
    fn choice_violation_in_response_is_rejected() {
        let response = serde_json::json!({
            "choices": [{ "message": { "content": "banana" }, "finish_reason": "stop" }]
        });
        let mut req = request();
        req.constraint = GenerationConstraint::choice_set(["Trump", "Clinton"]);
        let err = parse_response(&ServerProfile::vllm(), &req, &response).unwrap_err();
        assert!(matches!(err, BackendError::ConstraintRejected(_)));
    }

    #[test]
    fn profile_capabilities_reflect_dialect() {
        let vllm = ServerProfile::vllm().capabilities();
        assert!(vllm.supports_choice_set && vllm.supports_json_schema && vllm.supports_prefill);
        let openai = ServerProfile::openai().capabilities();
        assert!(!openai.supports_choice_set);
        assert!(openai.supports_json_schema);
        assert!(!openai.supports_prefill);
    }
}
