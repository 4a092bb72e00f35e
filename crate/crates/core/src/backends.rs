//! Chat-completion and embedding providers.
//!
//! Remote providers speak the common chat-completions JSON shape
//! (`{model, messages: [{role, content}], temperature}`) and a minimal
//! embedding shape (`{model, input}` → `{embedding: [...]}`). The scripted
//! chat provider and the hashing embedder are deterministic offline
//! stand-ins used by tests and dry runs.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::sync::{Condvar, Mutex, OnceLock};
use std::thread;
use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

/// Environment variable consulted for the API key unless configured otherwise.
pub const DEFAULT_API_KEY_ENV: &str = "ECHO_API_KEY";

/// Prefix used when a provider has no native observation role.
pub const OBSERVATION_PREFIX: &str = "[time] ";

/// Dimension of [`test_embed`] vectors.
pub const TEST_EMBED_DIM: usize = 256;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("invalid backend configuration: {0}")]
    Config(String),
    #[error("request failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("provider returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("provider response could not be decoded: {0}")]
    Protocol(String),
    #[error("provider returned an empty completion")]
    EmptyCompletion,
    #[error("scripted replies for agent {agent:?} exhausted at call {call}")]
    Exhausted { agent: String, call: usize },
    #[error("embedding dimension changed from {expected} to {actual}")]
    DimensionDrift { expected: usize, actual: usize },
    #[error("embedding contains non-finite components")]
    NonFinite,
    #[error("cannot read fixture {path}: {message}")]
    Fixture { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Observation,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Observation => "observation",
            Role::Assistant => "assistant",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        ChatMessage {
            role,
            content: content.into(),
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self::new(Role::System, content)
    }
    pub fn user(content: impl Into<String>) -> Self {
        Self::new(Role::User, content)
    }
    pub fn assistant(content: impl Into<String>) -> Self {
        Self::new(Role::Assistant, content)
    }
    pub fn observation(content: impl Into<String>) -> Self {
        Self::new(Role::Observation, content)
    }
}

/// Maps messages onto the provider wire roles. Observation turns become
/// user messages prefixed with `[time] `.
pub fn to_wire_messages(messages: &[ChatMessage]) -> Vec<Value> {
    messages
        .iter()
        .map(|m| match m.role {
            Role::Observation => json!({
                "role": "user",
                "content": format!("{OBSERVATION_PREFIX}{}", m.content),
            }),
            role => json!({"role": role.as_str(), "content": m.content}),
        })
        .collect()
}

fn check_messages(messages: &[ChatMessage]) -> Result<(), BackendError> {
    if messages.is_empty() {
        return Err(BackendError::Precondition("no messages to send".into()));
    }
    if let Some(m) = messages
        .iter()
        .find(|m| matches!(m.role, Role::User | Role::Assistant) && m.content.trim().is_empty())
    {
        return Err(BackendError::Precondition(format!(
            "empty {} message",
            m.role
        )));
    }
    Ok(())
}

/// A chat-completion provider.
///
/// `agent` names the caller (e.g. `"human"`, `"assistant"`, a test point
/// id). Remote providers ignore it; the scripted provider keys its replies
/// on it.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, agent: &str, messages: &[ChatMessage]) -> Result<String, BackendError>;

    /// Validates the request, calls the provider and rejects empty replies.
    fn chat(&self, agent: &str, messages: &[ChatMessage]) -> Result<String, BackendError> {
        check_messages(messages)?;
        let reply = self.complete(agent, messages)?;
        if reply.trim().is_empty() {
            return Err(BackendError::EmptyCompletion);
        }
        Ok(reply)
    }
}

impl<T: ChatBackend + ?Sized> ChatBackend for &T {
    fn complete(&self, agent: &str, messages: &[ChatMessage]) -> Result<String, BackendError> {
        (**self).complete(agent, messages)
    }
}

impl<T: ChatBackend + ?Sized> ChatBackend for Box<T> {
    fn complete(&self, agent: &str, messages: &[ChatMessage]) -> Result<String, BackendError> {
        (**self).complete(agent, messages)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub endpoint: String,
    pub model_name: String,
    pub api_key_env: String,
    pub temperature: f64,
    pub timeout_secs: f64,
    /// Retries after the first attempt; 2 means three attempts in total.
    pub max_retries: u32,
    /// Base delay of the exponential backoff between attempts.
    pub backoff_ms: u64,
    pub max_in_flight: usize,
    /// Expected embedding dimension, when the provider advertises one.
    pub dimension: Option<usize>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            endpoint: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model_name: "default".into(),
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            temperature: 0.8,
            timeout_secs: 120.0,
            max_retries: 2,
            backoff_ms: 500,
            max_in_flight: 8,
            dimension: None,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), BackendError> {
        let url = reqwest::Url::parse(&self.endpoint)
            .map_err(|e| BackendError::Config(format!("endpoint {:?}: {e}", self.endpoint)))?;
        if !matches!(url.scheme(), "http" | "https") {
            return Err(BackendError::Config(format!(
                "endpoint scheme must be http or https, got {}",
                url.scheme()
            )));
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(BackendError::Config("timeout must be positive".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(BackendError::Config("temperature must be >= 0".into()));
        }
        if self.max_in_flight == 0 {
            return Err(BackendError::Config("max_in_flight must be >= 1".into()));
        }
        if self.dimension == Some(0) {
            return Err(BackendError::Config("dimension must be > 0".into()));
        }
        Ok(())
    }
}

/// Counting semaphore bounding concurrent requests per provider.
struct Gate {
    permits: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn new(permits: usize) -> Self {
        Gate {
            permits: Mutex::new(permits),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.permits.lock().unwrap_or_else(|e| e.into_inner());
        while *n == 0 {
            n = self.cv.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.permits.lock().unwrap_or_else(|e| e.into_inner());
        *n += 1;
        self.0.cv.notify_one();
    }
}

/// Shared HTTP plumbing: auth, in-flight cap, retries with backoff.
struct HttpTransport {
    config: BackendConfig,
    client: Client,
    api_key: Option<String>,
    gate: Gate,
}

impl HttpTransport {
    fn new(config: BackendConfig) -> Result<Self, BackendError> {
        config.validate()?;
        let client = Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_secs))
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        let api_key = std::env::var(&config.api_key_env)
            .ok()
            .filter(|k| !k.is_empty());
        let gate = Gate::new(config.max_in_flight);
        Ok(HttpTransport {
            config,
            client,
            api_key,
            gate,
        })
    }

    fn post(&self, body: &Value) -> Result<Value, BackendError> {
        let _permit = self.gate.acquire();
        let attempts = self.config.max_retries + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                let delay = self
                    .config
                    .backoff_ms
                    .saturating_mul(1 << (attempt - 1).min(16));
                thread::sleep(Duration::from_millis(delay));
            }
            let mut req = self.client.post(&self.config.endpoint).json(body);
            if let Some(key) = &self.api_key {
                req = req.bearer_auth(key);
            }
            match req.send() {
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_success() {
                        return resp
                            .json::<Value>()
                            .map_err(|e| BackendError::Protocol(e.to_string()));
                    }
                    let body = resp.text().unwrap_or_default();
                    if status == StatusCode::TOO_MANY_REQUESTS || status.is_server_error() {
                        log::warn!("attempt {} got HTTP {status}", attempt + 1);
                        last = format!("HTTP {status}: {body}");
                        continue;
                    }
                    return Err(BackendError::Status {
                        status: status.as_u16(),
                        body,
                    });
                }
                Err(e) => {
                    log::warn!("attempt {} failed: {e}", attempt + 1);
                    last = e.to_string();
                }
            }
        }
        Err(BackendError::Transport {
            attempts,
            message: last,
        })
    }
}

/// Chat provider for any chat-completions compatible endpoint.
pub struct HttpChat {
    transport: HttpTransport,
}

impl HttpChat {
    pub fn new(config: BackendConfig) -> Result<Self, BackendError> {
        Ok(HttpChat {
            transport: HttpTransport::new(config)?,
        })
    }

    pub fn request_body(&self, messages: &[ChatMessage]) -> Value {
        let config = &self.transport.config;
        json!({
            "model": config.model_name,
            "messages": to_wire_messages(messages),
            "temperature": config.temperature,
        })
    }
}

impl ChatBackend for HttpChat {
    fn complete(&self, _agent: &str, messages: &[ChatMessage]) -> Result<String, BackendError> {
        let resp = self.transport.post(&self.request_body(messages))?;
        let content = resp
            .pointer("/choices/0/message/content")
            .ok_or_else(|| BackendError::Protocol("missing choices[0].message.content".into()))?;
        match content {
            Value::String(s) => Ok(s.clone()),
            Value::Null => Ok(String::new()),
            other => Err(BackendError::Protocol(format!(
                "unexpected content type: {other}"
            ))),
        }
    }
}

/// Replies keyed by agent tag, served in order.
///
/// Fixture files look like `{"replies": {"human": ["hi", "bye"], "*": [...]}}`;
/// the `"*"` list serves any agent without its own list. Each agent has its
/// own call counter. Every call is recorded for transcript audits.
#[derive(Debug, Default)]
pub struct ScriptedChat {
    replies: HashMap<String, Vec<String>>,
    calls: Mutex<HashMap<String, usize>>,
    transcript: Mutex<Vec<(String, Vec<ChatMessage>)>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReplyScript {
    pub replies: HashMap<String, Vec<String>>,
}

impl ReplyScript {
    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let fixture_err = |message: String| BackendError::Fixture {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| fixture_err(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| fixture_err(e.to_string()))
    }
}

impl ScriptedChat {
    pub fn new(script: ReplyScript) -> Self {
        ScriptedChat {
            replies: script.replies,
            ..Default::default()
        }
    }

    /// One reply list served to every agent.
    pub fn single<S: Into<String>>(replies: impl IntoIterator<Item = S>) -> Self {
        let mut map = HashMap::new();
        map.insert(
            "*".to_string(),
            replies.into_iter().map(Into::into).collect(),
        );
        Self::new(ReplyScript { replies: map })
    }

    pub fn with_agent<S: Into<String>>(
        mut self,
        agent: &str,
        replies: impl IntoIterator<Item = S>,
    ) -> Self {
        self.replies.insert(
            agent.to_string(),
            replies.into_iter().map(Into::into).collect(),
        );
        self
    }

    pub fn transcript(&self) -> Vec<(String, Vec<ChatMessage>)> {
        self.transcript
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .clone()
    }

    /// Fresh copy of the script with all counters reset.
    pub fn reset(&self) -> Self {
        ScriptedChat {
            replies: self.replies.clone(),
            ..Default::default()
        }
    }
}

impl ChatBackend for ScriptedChat {
    fn complete(&self, agent: &str, messages: &[ChatMessage]) -> Result<String, BackendError> {
        self.transcript
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .push((agent.to_string(), messages.to_vec()));
        let list = self
            .replies
            .get(agent)
            .or_else(|| self.replies.get("*"))
            .ok_or_else(|| BackendError::Exhausted {
                agent: agent.to_string(),
                call: 0,
            })?;
        let mut calls = self.calls.lock().unwrap_or_else(|e| e.into_inner());
        let call = calls.entry(agent.to_string()).or_insert(0);
        let reply = list.get(*call).cloned().ok_or(BackendError::Exhausted {
            agent: agent.to_string(),
            call: *call,
        })?;
        *call += 1;
        Ok(reply)
    }
}

/// A finite, non-empty embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(components: Vec<f64>) -> Result<Self, BackendError> {
        if components.is_empty() {
            return Err(BackendError::Protocol("empty embedding".into()));
        }
        if components.iter().any(|c| !c.is_finite()) {
            return Err(BackendError::NonFinite);
        }
        Ok(EmbeddingVector(components))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &EmbeddingVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = BackendError;
    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        EmbeddingVector::new(v)
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Self {
        v.0
    }
}

pub trait Embedder: Send + Sync {
    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, BackendError>;

    /// Rejects blank input, then embeds.
    fn embed(&self, text: &str) -> Result<EmbeddingVector, BackendError> {
        if text.trim().is_empty() {
            return Err(BackendError::Precondition("cannot embed empty text".into()));
        }
        self.embed_text(text)
    }
}

impl<T: Embedder + ?Sized> Embedder for &T {
    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, BackendError> {
        (**self).embed_text(text)
    }
}

impl<T: Embedder + ?Sized> Embedder for Box<T> {
    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, BackendError> {
        (**self).embed_text(text)
    }
}

/// Embedding endpoint client. The first response fixes the dimension
/// (unless configured up front); later responses must match it.
pub struct HttpEmbedder {
    transport: HttpTransport,
    dimension: OnceLock<usize>,
}

impl HttpEmbedder {
    pub fn new(config: BackendConfig) -> Result<Self, BackendError> {
        let dimension = OnceLock::new();
        if let Some(d) = config.dimension {
            let _ = dimension.set(d);
        }
        Ok(HttpEmbedder {
            transport: HttpTransport::new(config)?,
            dimension,
        })
    }
}

impl Embedder for HttpEmbedder {
    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, BackendError> {
        let body = json!({"model": self.transport.config.model_name, "input": text});
        let resp = self.transport.post(&body)?;
        let raw = resp
            .get("embedding")
            .or_else(|| resp.pointer("/data/0/embedding"))
            .ok_or_else(|| BackendError::Protocol("missing embedding".into()))?;
        let components: Vec<f64> = serde_json::from_value(raw.clone())
            .map_err(|e| BackendError::Protocol(e.to_string()))?;
        let v = EmbeddingVector::new(components)?;
        let expected = *self.dimension.get_or_init(|| v.dim());
        if v.dim() != expected {
            return Err(BackendError::DimensionDrift {
                expected,
                actual: v.dim(),
            });
        }
        Ok(v)
    }
}

/// Deterministic bag-of-tokens embedder; see [`test_embed`].
#[derive(Debug, Clone, Copy, Default)]
pub struct HashEmbedder;

impl Embedder for HashEmbedder {
    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, BackendError> {
        Ok(test_embed(text))
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Lowercased alphanumeric tokens.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

/// Bucket 0 is reserved for token-free text; tokens hash into 1..256.
pub fn token_bucket(token: &str) -> usize {
    1 + (fnv1a(token.as_bytes()) % (TEST_EMBED_DIM as u64 - 1)) as usize
}

/// 256-dimension hashed bag of tokens, L2-normalized. Text without any
/// alphanumeric token maps to the unit vector on bucket 0.
pub fn test_embed(text: &str) -> EmbeddingVector {
    let mut v = vec![0.0; TEST_EMBED_DIM];
    for token in tokenize(text) {
        v[token_bucket(&token)] += 1.0;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        v[0] = 1.0;
    } else {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    EmbeddingVector(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scripted_replies_in_order_then_exhaust() {
        let chat = ScriptedChat::single(["hi", "bye"]);
        let msgs = [ChatMessage::user("hello")];
        assert_eq!(chat.chat("a", &msgs).unwrap(), "hi");
        assert_eq!(chat.chat("a", &msgs).unwrap(), "bye");
        assert!(matches!(
            chat.chat("a", &msgs),
            Err(BackendError::Exhausted { call: 2, .. })
        ));
    }

    #[test]
    fn scripted_counters_are_per_agent() {
        let chat = ScriptedChat::single(["x", "y"]).with_agent("human", ["h1"]);
        let msgs = [ChatMessage::user("q")];
        assert_eq!(chat.chat("human", &msgs).unwrap(), "h1");
        assert_eq!(chat.chat("assistant", &msgs).unwrap(), "x");
        assert_eq!(chat.chat("other", &msgs).unwrap(), "x");
        assert_eq!(chat.chat("assistant", &msgs).unwrap(), "y");
    }

    #[test]
    fn scripted_reset_replays_identically() {
        let chat = ScriptedChat::single(["a", "b"]);
        let msgs = [ChatMessage::user("q")];
        let first: Vec<_> = (0..2).map(|_| chat.chat("x", &msgs).unwrap()).collect();
        let again = chat.reset();
        let second: Vec<_> = (0..2).map(|_| again.chat("x", &msgs).unwrap()).collect();
        assert_eq!(first, second);
    }

    #[test]
    fn chat_preconditions() {
        let chat = ScriptedChat::single(["unused"]);
        assert!(matches!(
            chat.chat("a", &[]),
            Err(BackendError::Precondition(_))
        ));
        assert!(matches!(
            chat.chat("a", &[ChatMessage::user("  ")]),
            Err(BackendError::Precondition(_))
        ));
        let empty = ScriptedChat::single([""]);
        assert!(matches!(
            empty.chat("a", &[ChatMessage::user("q")]),
            Err(BackendError::EmptyCompletion)
        ));
    }

    #[test]
    fn chat_does_not_mutate_input() {
        let chat = ScriptedChat::single(["r"]);
        let msgs = vec![ChatMessage::system("s"), ChatMessage::user("u")];
        let before = msgs.clone();
        chat.chat("a", &msgs).unwrap();
        assert_eq!(msgs, before);
        assert_eq!(chat.transcript()[0].1, before);
    }

    #[test]
    fn observation_downgrades_to_prefixed_user() {
        let wire = to_wire_messages(&[
            ChatMessage::system("sys"),
            ChatMessage::observation("Monday, September 4, 2006, 21:42:56"),
        ]);
        assert_eq!(wire[0]["role"], "system");
        assert_eq!(wire[1]["role"], "user");
        assert_eq!(
            wire[1]["content"],
            "[time] Monday, September 4, 2006, 21:42:56"
        );
    }

    #[test]
    fn config_validation() {
        assert!(BackendConfig::default().validate().is_ok());
        let bad = BackendConfig {
            endpoint: "not a url".into(),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = BackendConfig {
            timeout_secs: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = BackendConfig {
            endpoint: "ftp://x".into(),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn test_embed_is_normalized_and_deterministic() {
        for s in ["Hello world", "", "!!!", "I bought tomatoes at Walmart."] {
            let a = test_embed(s);
            assert_eq!(a, test_embed(s));
            assert_eq!(a.dim(), TEST_EMBED_DIM);
            assert!((a.norm() - 1.0).abs() < 1e-9);
        }
        assert_eq!(test_embed("...").as_slice()[0], 1.0);
    }

    #[test]
    fn test_embed_ignores_case_and_punctuation() {
        assert_eq!(test_embed("Hello, World!"), test_embed("hello world"));
    }

    #[test]
    fn disjoint_tokens_are_orthogonal() {
        let a = "apples oranges";
        let b = "violin trumpet";
        let ba: Vec<_> = tokenize(a).map(|t| token_bucket(&t)).collect();
        let bb: Vec<_> = tokenize(b).map(|t| token_bucket(&t)).collect();
        assert!(ba.iter().all(|x| !bb.contains(x)));
        assert_eq!(test_embed(a).dot(&test_embed(b)), 0.0);
    }

    #[test]
    fn embed_rejects_blank() {
        assert!(matches!(
            HashEmbedder.embed("   "),
            Err(BackendError::Precondition(_))
        ));
    }

    #[test]
    fn embedding_vector_rejects_non_finite() {
        assert!(matches!(
            EmbeddingVector::new(vec![1.0, f64::NAN]),
            Err(BackendError::NonFinite)
        ));
        assert!(EmbeddingVector::new(vec![]).is_err());
    }
}
