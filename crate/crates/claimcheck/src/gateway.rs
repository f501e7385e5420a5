//! Uniform interface to chat-completion providers, plus a deterministic
//! scripted backend for offline runs.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::retrieval::BackoffPolicy;
use crate::util::{now_rfc3339, sha256_hex, RateLimiter};

pub const DEFAULT_TEMPERATURE: f64 = 0.0;
pub const DEFAULT_MAX_OUTPUT_TOKENS: u32 = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }
    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }
    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
    pub fn tool(content: impl Into<String>) -> Self {
        Self { role: Role::Tool, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub messages: Vec<ChatMessage>,
    pub model_id: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl CompletionRequest {
    pub fn new(model_id: impl Into<String>, messages: Vec<ChatMessage>) -> Self {
        Self {
            messages,
            model_id: model_id.into(),
            temperature: DEFAULT_TEMPERATURE,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidRequest("messages must be non-empty".into()));
        }
        if !matches!(self.messages[0].role, Role::System | Role::User) {
            return Err(GatewayError::InvalidRequest(
                "first message must have role system or user".into(),
            ));
        }
        if self
            .messages
            .iter()
            .any(|m| m.role != Role::System && m.content.is_empty())
        {
            return Err(GatewayError::InvalidRequest(
                "user/assistant/tool content must be non-empty".into(),
            ));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(GatewayError::InvalidRequest("temperature must be >= 0".into()));
        }
        if self.max_output_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_output_tokens must be > 0".into()));
        }
        Ok(())
    }

    /// Stable digest of the full request, recorded in the trace log.
    pub fn digest(&self) -> String {
        let body = serde_json::to_string(self).expect("request serializes");
        sha256_hex(body.as_bytes())
    }
}

#[derive(Debug, Clone)]
pub struct CompletionResponse {
    pub text: String,
    pub prompt_tokens: Option<u32>,
    pub completion_tokens: Option<u32>,
}

impl CompletionResponse {
    pub fn text_only(text: impl Into<String>) -> Self {
        Self { text: text.into(), prompt_tokens: None, completion_tokens: None }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GatewayError {
    #[error("invalid completion request: {0}")]
    InvalidRequest(String),
    #[error("provider error: {0}")]
    Provider(String),
    #[error("provider rejected request length")]
    ContextOverflow,
    #[error("scripted backend exhausted after {0} responses")]
    ScriptExhausted(usize),
    #[error("cannot parse script {path}: {message}")]
    ScriptParse { path: String, message: String },
}

impl GatewayError {
    /// Stable class name recorded in traces and prediction rows.
    pub fn class(&self) -> &'static str {
        match self {
            GatewayError::InvalidRequest(_) => "InvalidRequest",
            GatewayError::Provider(_) => "ProviderError",
            GatewayError::ContextOverflow => "ContextOverflow",
            GatewayError::ScriptExhausted(_) => "ProviderError",
            GatewayError::ScriptParse { .. } => "ScriptParseError",
        }
    }
}

/// A chat-completion backend. Each agent session owns one instance.
pub trait ChatBackend: Send {
    fn complete(&mut self, request: &CompletionRequest) -> Result<CompletionResponse, GatewayError>;
}

/// Replays a fixed list of responses in order. Requesting beyond the end of
/// the script is an error, never a silent wraparound.
#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    script: Vec<String>,
    cursor: usize,
}

impl ScriptedBackend {
    pub fn new(script: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self { script: script.into_iter().map(Into::into).collect(), cursor: 0 }
    }

    /// Load a script file: a JSON array of response strings. An empty file
    /// is an empty script.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let path = path.as_ref();
        let content = std::fs::read_to_string(path).map_err(|e| GatewayError::ScriptParse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        if content.trim().is_empty() {
            return Ok(Self::new(Vec::<String>::new()));
        }
        let script: Vec<String> =
            serde_json::from_str(&content).map_err(|e| GatewayError::ScriptParse {
                path: path.display().to_string(),
                message: format!("line {}: {}", e.line(), e),
            })?;
        Ok(Self::new(script))
    }

    pub fn remaining(&self) -> usize {
        self.script.len() - self.cursor
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&mut self, _request: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        match self.script.get(self.cursor) {
            Some(text) => {
                self.cursor += 1;
                Ok(CompletionResponse::text_only(text.clone()))
            }
            None => Err(GatewayError::ScriptExhausted(self.script.len())),
        }
    }
}

/// OpenAI-style chat-completions client over HTTP, with retries.
#[derive(Clone)]
pub struct LiveChatBackend {
    base_url: String,
    api_key: String,
    agent: ureq::Agent,
    backoff: BackoffPolicy,
}

impl LiveChatBackend {
    pub const API_KEY_ENV: &'static str = "LLM_API_KEY";
    pub const API_BASE_ENV: &'static str = "LLM_API_BASE";
    pub const DEFAULT_BASE: &'static str = "https://api.openai.com/v1";

    pub fn new(base_url: impl Into<String>, api_key: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            api_key: api_key.into(),
            agent: ureq::Agent::new_with_defaults(),
            backoff: BackoffPolicy::default(),
        }
    }

    pub fn from_env() -> Result<Self, GatewayError> {
        let key = std::env::var(Self::API_KEY_ENV)
            .map_err(|_| GatewayError::Provider(format!("{} not set", Self::API_KEY_ENV)))?;
        let base =
            std::env::var(Self::API_BASE_ENV).unwrap_or_else(|_| Self::DEFAULT_BASE.to_string());
        Ok(Self::new(base, key))
    }

    pub fn with_backoff(mut self, backoff: BackoffPolicy) -> Self {
        self.backoff = backoff;
        self
    }

    fn call_once(&self, request: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        let wire_messages: Vec<serde_json::Value> = request
            .messages
            .iter()
            .map(|m| {
                // tool observations ride as user turns for providers without
                // a paired tool-call id
                let role = match m.role {
                    Role::System => "system",
                    Role::User | Role::Tool => "user",
                    Role::Assistant => "assistant",
                };
                serde_json::json!({"role": role, "content": m.content})
            })
            .collect();
        let body = serde_json::json!({
            "model": request.model_id,
            "messages": wire_messages,
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        });
        let url = format!("{}/chat/completions", self.base_url.trim_end_matches('/'));
        let response = self
            .agent
            .post(&url)
            .header("authorization", &format!("Bearer {}", self.api_key))
            .send_json(&body);
        let mut response = match response {
            Ok(r) => r,
            Err(ureq::Error::StatusCode(code)) if code == 400 || code == 413 => {
                return Err(GatewayError::ContextOverflow)
            }
            Err(e) => return Err(GatewayError::Provider(e.to_string())),
        };
        let parsed: serde_json::Value = response
            .body_mut()
            .read_json()
            .map_err(|e| GatewayError::Provider(e.to_string()))?;
        let text = parsed["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| GatewayError::Provider("response missing message content".into()))?
            .to_string();
        Ok(CompletionResponse {
            text,
            prompt_tokens: parsed["usage"]["prompt_tokens"].as_u64().map(|v| v as u32),
            completion_tokens: parsed["usage"]["completion_tokens"].as_u64().map(|v| v as u32),
        })
    }
}

impl ChatBackend for LiveChatBackend {
    fn complete(&mut self, request: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        let mut last_err = GatewayError::Provider("no attempts made".into());
        for attempt in 0..self.backoff.attempts {
            let delay = self.backoff.delay_before(attempt);
            if !delay.is_zero() {
                std::thread::sleep(delay);
            }
            match self.call_once(request) {
                Ok(r) => return Ok(r),
                Err(e @ GatewayError::ContextOverflow) => return Err(e),
                Err(e) => last_err = e,
            }
        }
        Err(last_err)
    }
}

/// One line of the append-only gateway trace log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceRecord {
    pub ts: String,
    pub session_id: String,
    pub model_id: String,
    pub request_digest: String,
    pub response: Option<String>,
    pub error: Option<String>,
    pub latency_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_tokens: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completion_tokens: Option<u32>,
}

/// Append-only JSON-lines log shared by all sessions of a run. Writes are
/// record-atomic: one line per call, flushed under the lock.
pub struct TraceLog {
    path: PathBuf,
    file: Mutex<std::fs::File>,
}

impl TraceLog {
    pub fn create(path: impl Into<PathBuf>) -> std::io::Result<Arc<Self>> {
        let path = path.into();
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let file = std::fs::OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Arc::new(Self { path, file: Mutex::new(file) }))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, record: &TraceRecord) {
        let mut line = serde_json::to_string(record).expect("trace record serializes");
        line.push('\n');
        let mut file = self.file.lock().expect("trace log poisoned");
        let _ = file.write_all(line.as_bytes());
        let _ = file.flush();
    }

    pub fn read_records(path: impl AsRef<Path>) -> std::io::Result<Vec<TraceRecord>> {
        let content = std::fs::read_to_string(path)?;
        Ok(content
            .lines()
            .filter(|l| !l.trim().is_empty())
            .filter_map(|l| serde_json::from_str(l).ok())
            .collect())
    }
}

/// Session-scoped wrapper: validates requests, applies the shared rate
/// limiter, and appends exactly one trace record per call, error or not.
pub struct Gateway {
    backend: Box<dyn ChatBackend>,
    session_id: String,
    trace: Option<Arc<TraceLog>>,
    rate_limiter: Option<Arc<RateLimiter>>,
    calls: usize,
}

impl Gateway {
    pub fn new(session_id: impl Into<String>, backend: Box<dyn ChatBackend>) -> Self {
        Self {
            backend,
            session_id: session_id.into(),
            trace: None,
            rate_limiter: None,
            calls: 0,
        }
    }

    pub fn with_trace(mut self, trace: Arc<TraceLog>) -> Self {
        self.trace = Some(trace);
        self
    }

    pub fn with_rate_limiter(mut self, limiter: Arc<RateLimiter>) -> Self {
        self.rate_limiter = Some(limiter);
        self
    }

    pub fn calls(&self) -> usize {
        self.calls
    }

    pub fn complete(&mut self, request: &CompletionRequest) -> Result<String, GatewayError> {
        request.validate()?;
        if let Some(limiter) = &self.rate_limiter {
            limiter.acquire();
        }
        let started = Instant::now();
        let result = self.backend.complete(request);
        self.calls += 1;
        if let Some(trace) = &self.trace {
            let (response, error, pt, ct) = match &result {
                Ok(r) => (Some(r.text.clone()), None, r.prompt_tokens, r.completion_tokens),
                Err(e) => (None, Some(e.class().to_string()), None, None),
            };
            trace.append(&TraceRecord {
                ts: now_rfc3339(),
                session_id: self.session_id.clone(),
                model_id: request.model_id.clone(),
                request_digest: request.digest(),
                response,
                error,
                latency_ms: started.elapsed().as_millis() as u64,
                prompt_tokens: pt,
                completion_tokens: ct,
            });
        }
        result.map(|r| r.text)
    }
}

/// Builds a fresh backend per agent session; a scripted backend must not be
/// shared across sessions.
pub trait BackendFactory: Send + Sync {
    fn session_backend(&self, claim_id: &str) -> Result<Box<dyn ChatBackend>, GatewayError>;
}

/// Live provider factory: every session gets a clone of one HTTP client.
pub struct LiveBackendFactory {
    backend: LiveChatBackend,
}

impl LiveBackendFactory {
    pub fn new(backend: LiveChatBackend) -> Self {
        Self { backend }
    }
}

impl BackendFactory for LiveBackendFactory {
    fn session_backend(&self, _claim_id: &str) -> Result<Box<dyn ChatBackend>, GatewayError> {
        Ok(Box::new(self.backend.clone()))
    }
}

/// Scripted factory over a directory: `<dir>/<claim_id>.json` wins, then
/// `<dir>/default.json`. Claim ids are sanitized to filename-safe form.
pub struct ScriptDirFactory {
    dir: PathBuf,
}

impl ScriptDirFactory {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn script_path_for(&self, claim_id: &str) -> PathBuf {
        self.dir.join(format!("{}.json", sanitize_for_filename(claim_id)))
    }
}

impl BackendFactory for ScriptDirFactory {
    fn session_backend(&self, claim_id: &str) -> Result<Box<dyn ChatBackend>, GatewayError> {
        let specific = self.script_path_for(claim_id);
        let path = if specific.exists() { specific } else { self.dir.join("default.json") };
        if !path.exists() {
            return Err(GatewayError::ScriptParse {
                path: path.display().to_string(),
                message: format!("no script for session {claim_id:?}"),
            });
        }
        Ok(Box::new(ScriptedBackend::load(path)?))
    }
}

/// In-memory factory keyed by claim id, for tests and generated runs.
#[derive(Default)]
pub struct InMemoryScriptFactory {
    scripts: BTreeMap<String, Vec<String>>,
    default: Option<Vec<String>>,
}

impl InMemoryScriptFactory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, claim_id: impl Into<String>, script: Vec<String>) {
        self.scripts.insert(claim_id.into(), script);
    }

    pub fn set_default(&mut self, script: Vec<String>) {
        self.default = Some(script);
    }
}

impl BackendFactory for InMemoryScriptFactory {
    fn session_backend(&self, claim_id: &str) -> Result<Box<dyn ChatBackend>, GatewayError> {
        let script = self
            .scripts
            .get(claim_id)
            .or(self.default.as_ref())
            .ok_or_else(|| GatewayError::Provider(format!("no script for {claim_id:?}")))?;
        Ok(Box::new(ScriptedBackend::new(script.clone())))
    }
}

pub fn sanitize_for_filename(raw: &str) -> String {
    raw.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' || c == '_' { c } else { '_' })
        .collect()
}
