//! Scriptable deterministic mock backend.
//!
//! A mock replays scripted responses matched against incoming requests:
//! exact (system, user) keys for pre-planned fixtures, substring matchers
//! for generic behaviors (garbage text, fixed token distributions, partial
//! JSON), and an optional default. Replay is deterministic regardless of
//! interleaving, and scripted text is checked against the request
//! constraint: a script that violates it surfaces as a constraint
//! rejection, never as silently out-of-set text.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;

use serde::Deserialize;

use super::{
    Backend, BackendCapabilities, BackendError, FinishReason, GenerationConstraint,
    GenerationRequest, GenerationResult, TokenLogprob,
};

/// Predicate over incoming requests.
#[derive(Debug, Clone, PartialEq)]
pub enum RequestMatcher {
    Any,
    UserContains(String),
    SystemContains(String),
    UserEquals(String),
}

impl RequestMatcher {
    fn matches(&self, request: &GenerationRequest) -> bool {
        match self {
            RequestMatcher::Any => true,
            RequestMatcher::UserContains(s) => request.user_text.contains(s.as_str()),
            RequestMatcher::SystemContains(s) => request.system_text.contains(s.as_str()),
            RequestMatcher::UserEquals(s) => request.user_text == *s,
        }
    }
}

/// A canned response.
#[derive(Debug, Clone, PartialEq)]
pub struct ScriptedResponse {
    pub text: String,
    pub reasoning_text: Option<String>,
    pub logprobs: Option<Vec<TokenLogprob>>,
    pub finish_reason: FinishReason,
}

impl ScriptedResponse {
    pub fn text(text: impl Into<String>) -> Self {
        ScriptedResponse {
            text: text.into(),
            reasoning_text: None,
            logprobs: None,
            finish_reason: FinishReason::Stop,
        }
    }

    pub fn with_logprobs(mut self, logprobs: Vec<TokenLogprob>) -> Self {
        self.logprobs = Some(logprobs);
        self
    }

    pub fn with_reasoning(mut self, reasoning: impl Into<String>) -> Self {
        self.reasoning_text = Some(reasoning.into());
        self
    }
}

/// The full behavior plan of a mock backend.
#[derive(Debug, Clone, Default)]
pub struct MockScript {
    /// Exact (system_text, user_text) lookups; checked first.
    exact: HashMap<(String, String), ScriptedResponse>,
    /// Ordered matcher rules; first match wins.
    rules: Vec<(RequestMatcher, ScriptedResponse)>,
    default_response: Option<ScriptedResponse>,
    /// When set, an unmatched request is an error instead of empty output.
    strict: bool,
}

impl MockScript {
    pub fn new() -> Self {
        MockScript::default()
    }

    pub fn strict(mut self) -> Self {
        self.strict = true;
        self
    }

    pub fn exact(
        mut self,
        system_text: impl Into<String>,
        user_text: impl Into<String>,
        response: ScriptedResponse,
    ) -> Self {
        self.exact
            .insert((system_text.into(), user_text.into()), response);
        self
    }

    pub fn insert_exact(
        &mut self,
        system_text: impl Into<String>,
        user_text: impl Into<String>,
        response: ScriptedResponse,
    ) {
        self.exact
            .insert((system_text.into(), user_text.into()), response);
    }

    pub fn rule(mut self, matcher: RequestMatcher, response: ScriptedResponse) -> Self {
        self.rules.push((matcher, response));
        self
    }

    pub fn default_response(mut self, response: ScriptedResponse) -> Self {
        self.default_response = Some(response);
        self
    }

    fn lookup(&self, request: &GenerationRequest) -> Option<&ScriptedResponse> {
        let key = (request.system_text.clone(), request.user_text.clone());
        if let Some(response) = self.exact.get(&key) {
            return Some(response);
        }
        self.rules
            .iter()
            .find(|(matcher, _)| matcher.matches(request))
            .map(|(_, response)| response)
            .or(self.default_response.as_ref())
    }
}

/// Which constraint shape a request carried.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintKind {
    Unconstrained,
    ChoiceSet,
    JsonSchema,
}

impl From<&GenerationConstraint> for ConstraintKind {
    fn from(constraint: &GenerationConstraint) -> Self {
        match constraint {
            GenerationConstraint::Unconstrained => ConstraintKind::Unconstrained,
            GenerationConstraint::ChoiceSet { .. } => ConstraintKind::ChoiceSet,
            GenerationConstraint::JsonSchema { .. } => ConstraintKind::JsonSchema,
        }
    }
}

/// One observed generate call, for assertions on call counts, sharing, and
/// the request shape each method produces.
#[derive(Debug, Clone, PartialEq)]
pub struct CallRecord {
    pub system_text: String,
    pub user_text: String,
    pub constraint: ConstraintKind,
    pub requested_logprobs: bool,
    pub has_prefill: bool,
    pub temperature: f64,
}

/// Deterministic scriptable backend.
pub struct MockBackend {
    script: MockScript,
    capabilities: BackendCapabilities,
    calls: Mutex<Vec<CallRecord>>,
}

impl MockBackend {
    pub fn new(script: MockScript) -> Self {
        MockBackend {
            script,
            capabilities: BackendCapabilities::full(20),
            calls: Mutex::new(Vec::new()),
        }
    }

    /// A mock answering every request with the same response.
    pub fn fixed(response: ScriptedResponse) -> Self {
        MockBackend::new(MockScript::new().rule(RequestMatcher::Any, response))
    }

    pub fn with_capabilities(mut self, capabilities: BackendCapabilities) -> Self {
        self.capabilities = capabilities;
        self
    }

    /// Loads a declarative script fixture (TOML).
    pub fn from_script_file(path: &Path) -> Result<Self, BackendError> {
        let source = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Protocol(format!("cannot read mock script: {e}")))?;
        let file: ScriptFile = toml::from_str(&source)
            .map_err(|e| BackendError::Protocol(format!("malformed mock script: {e}")))?;
        Ok(MockBackend::new(file.into_script()?))
    }

    pub fn call_count(&self) -> usize {
        self.calls.lock().unwrap().len()
    }

    pub fn calls(&self) -> Vec<CallRecord> {
        self.calls.lock().unwrap().clone()
    }
}

impl Backend for MockBackend {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, BackendError> {
        request.validate(&self.capabilities)?;
        self.calls.lock().unwrap().push(CallRecord {
            system_text: request.system_text.clone(),
            user_text: request.user_text.clone(),
            constraint: (&request.constraint).into(),
            requested_logprobs: request.logprobs_top_k.is_some(),
            has_prefill: request.assistant_prefill.is_some(),
            temperature: request.sampling.temperature(),
        });

        let response = match self.script.lookup(request) {
            Some(response) => response.clone(),
            None if self.script.strict => {
                return Err(BackendError::Protocol(format!(
                    "unmatched request (strict mode): user text {:?}",
                    truncate(&request.user_text, 80)
                )));
            }
            None => ScriptedResponse::text(""),
        };

        let mut text = response.text;
        if let Some(prefill) = &request.assistant_prefill {
            if let Some(stripped) = text.strip_prefix(prefill.as_str()) {
                text = stripped.to_string();
            }
        }

        match &request.constraint {
            GenerationConstraint::Unconstrained => {}
            GenerationConstraint::ChoiceSet { choices } => {
                if !choices.iter().any(|c| c == text.trim()) {
                    return Err(BackendError::ConstraintRejected(format!(
                        "scripted text {:?} is not in the choice set",
                        truncate(&text, 80)
                    )));
                }
            }
            GenerationConstraint::JsonSchema { schema } => {
                let value: serde_json::Value = serde_json::from_str(text.trim()).map_err(|e| {
                    BackendError::ConstraintRejected(format!(
                        "scripted text is not valid JSON under the schema constraint: {e}"
                    ))
                })?;
                if !value_conforms(&value, schema) {
                    return Err(BackendError::ConstraintRejected(
                        "scripted JSON does not conform to the schema constraint".into(),
                    ));
                }
            }
        }

        let logprobs = match (request.logprobs_top_k, response.logprobs) {
            (Some(k), Some(mut lps)) => {
                lps.truncate(k as usize);
                super::check_logprob_sanity(&lps)?;
                Some(lps)
            }
            _ => None,
        };
        let reasoning_text = if request.reasoning_enabled {
            response.reasoning_text
        } else {
            None
        };

        Ok(GenerationResult {
            text,
            reasoning_text,
            first_content_token_logprobs: logprobs,
            finish_reason: response.finish_reason,
        })
    }

    fn capabilities(&self) -> BackendCapabilities {
        self.capabilities
    }
}

fn truncate(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((idx, _)) => &s[..idx],
        None => s,
    }
}

/// Checks a JSON value against the subset of JSON Schema used by the
/// restricted formats: object types with typed properties, `required`,
/// `enum`, and `additionalProperties: false`.
pub fn value_conforms(value: &serde_json::Value, schema: &serde_json::Value) -> bool {
    use serde_json::Value;
    if let Some(allowed) = schema.get("enum").and_then(Value::as_array) {
        return allowed.contains(value);
    }
    match schema.get("type").and_then(Value::as_str) {
        Some("object") => {
            let Value::Object(map) = value else {
                return false;
            };
            let properties = schema.get("properties").and_then(Value::as_object);
            if let Some(required) = schema.get("required").and_then(Value::as_array) {
                for key in required.iter().filter_map(Value::as_str) {
                    if !map.contains_key(key) {
                        return false;
                    }
                }
            }
            if schema.get("additionalProperties") == Some(&Value::Bool(false)) {
                if let Some(props) = properties {
                    if map.keys().any(|k| !props.contains_key(k)) {
                        return false;
                    }
                }
            }
            if let Some(props) = properties {
                for (key, sub_schema) in props {
                    if let Some(sub_value) = map.get(key) {
                        if !value_conforms(sub_value, sub_schema) {
                            return false;
                        }
                    }
                }
            }
            true
        }
        Some("string") => value.is_string(),
        Some("number") => value.is_number(),
        Some("integer") => value.is_i64() || value.is_u64(),
        Some("boolean") => value.is_boolean(),
        _ => true,
    }
}

// Declarative fixture format.

#[derive(Debug, Deserialize)]
struct ScriptFile {
    #[serde(default)]
    strict: bool,
    #[serde(default)]
    rules: Vec<ScriptRule>,
    #[serde(default)]
    default_response: Option<ScriptResponse>,
}

#[derive(Debug, Deserialize)]
struct ScriptRule {
    #[serde(rename = "match")]
    matcher: ScriptMatcher,
    response: ScriptResponse,
}

#[derive(Debug, Deserialize)]
struct ScriptMatcher {
    #[serde(default)]
    any: bool,
    #[serde(default)]
    user_contains: Option<String>,
    #[serde(default)]
    system_contains: Option<String>,
    #[serde(default)]
    user_equals: Option<String>,
}

#[derive(Debug, Deserialize)]
struct ScriptResponse {
    #[serde(default)]
    text: String,
    #[serde(default)]
    reasoning: Option<String>,
    #[serde(default)]
    logprobs: Vec<ScriptLogprob>,
    #[serde(default)]
    finish: Option<String>,
}

#[derive(Debug, Deserialize)]
struct ScriptLogprob {
    token: String,
    logprob: f64,
}

impl ScriptFile {
    fn into_script(self) -> Result<MockScript, BackendError> {
        let mut script = MockScript::new();
        if self.strict {
            script = script.strict();
        }
        for rule in self.rules {
            let matcher = rule.matcher.into_matcher()?;
            script = script.rule(matcher, rule.response.into_response()?);
        }
        if let Some(default) = self.default_response {
            script = script.default_response(default.into_response()?);
        }
        Ok(script)
    }
}

impl ScriptMatcher {
    fn into_matcher(self) -> Result<RequestMatcher, BackendError> {
        let mut matchers = Vec::new();
        if self.any {
            matchers.push(RequestMatcher::Any);
        }
        if let Some(s) = self.user_contains {
            matchers.push(RequestMatcher::UserContains(s));
        }
        if let Some(s) = self.system_contains {
            matchers.push(RequestMatcher::SystemContains(s));
        }
        if let Some(s) = self.user_equals {
            matchers.push(RequestMatcher::UserEquals(s));
        }
        match matchers.len() {
            1 => Ok(matchers.pop().unwrap()),
            0 => Err(BackendError::Protocol(
                "mock script rule needs exactly one matcher".into(),
            )),
            _ => Err(BackendError::Protocol(
                "mock script rule has ambiguous matchers".into(),
            )),
        }
    }
}

impl ScriptResponse {
    fn into_response(self) -> Result<ScriptedResponse, BackendError> {
        let finish_reason = match self.finish.as_deref() {
            None | Some("stop") => FinishReason::Stop,
            Some("length") => FinishReason::Length,
            Some("error") => FinishReason::Error,
            Some(other) => {
                return Err(BackendError::Protocol(format!(
                    "unknown finish reason {other:?} in mock script"
                )));
            }
        };
        let logprobs = if self.logprobs.is_empty() {
            None
        } else {
            Some(
                self.logprobs
                    .into_iter()
                    .map(|l| TokenLogprob::new(l.token, l.logprob))
                    .collect(),
            )
        };
        Ok(ScriptedResponse {
            text: self.text,
            reasoning_text: self.reasoning,
            logprobs,
            finish_reason,
        })
    }
}
