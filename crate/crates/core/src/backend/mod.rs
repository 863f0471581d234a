//! Uniform chat-completion interface over a remote OpenAI-compatible HTTP
//! endpoint and a deterministic scripted backend, with a persistent
//! response cache.
//!
//! Backends are injected as `&dyn ChatBackend`; swapping remote for
//! scripted changes no pipeline code path.

mod cache;
mod http;
mod instrument;
mod scripted;

pub use cache::{CachedBackend, DiskCache};
pub use http::HttpBackend;
pub use instrument::{CallCounters, InstrumentedBackend};
pub use scripted::{Script, ScriptRule, ScriptedBackend};

use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Errors surfaced by backends. Transport-level failures name the failing
/// endpoint and how many attempts were made.
#[derive(Debug, Error)]
pub enum BackendError {
    #[error("transport error calling {endpoint} after {attempts} attempt(s): {message}")]
    Transport {
        endpoint: String,
        attempts: u32,
        message: String,
    },
    #[error("rate limited by {endpoint}, retries exhausted after {attempts} attempt(s)")]
    RateLimited { endpoint: String, attempts: u32 },
    #[error("malformed response from {endpoint}: {message}")]
    MalformedResponse { endpoint: String, message: String },
    #[error("auth error for {endpoint}: {message}")]
    Auth { endpoint: String, message: String },
    #[error("scripted backend exhausted after {calls} call(s)")]
    ScriptExhausted { calls: usize },
    #[error("no scripted rule matches the prompt (starts with {preview:?})")]
    NoMatchingRule { preview: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("cache error: {0}")]
    Cache(String),
}

/// Message author role.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

/// One chat message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

/// Render messages to one text block, used for digests and rule matching.
pub fn render_messages(messages: &[ChatMessage]) -> String {
    let mut out = String::new();
    for m in messages {
        let role = match m.role {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        };
        out.push_str(role);
        out.push_str(": ");
        out.push_str(&m.content);
        out.push('\n');
    }
    out
}

/// Token accounting reported by the endpoint, when available.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub total_tokens: u64,
}

/// One completed request/response exchange.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatExchange {
    pub messages: Vec<ChatMessage>,
    pub response_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<TokenUsage>,
    /// Wall-clock latency of the call in milliseconds.
    #[serde(default)]
    pub latency_ms: u64,
}

/// Decoding and transport configuration for the model.
///
/// The API key itself never appears here, only the name of the
/// environment variable holding it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub model_name: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_top_p")]
    pub top_p: f64,
    #[serde(default = "default_max_output_tokens")]
    pub max_output_tokens: u32,
    #[serde(default)]
    pub endpoint_url: String,
    /// Name of the environment variable holding the API key.
    #[serde(default)]
    pub api_key_ref: String,
    /// Transport retry attempts for transient failures.
    #[serde(default = "default_max_attempts")]
    pub max_attempts: u32,
    /// First retry backoff in milliseconds; doubles per attempt.
    #[serde(default = "default_backoff_ms")]
    pub backoff_base_ms: u64,
    /// Hard deadline per request in milliseconds.
    #[serde(default = "default_timeout_ms")]
    pub request_timeout_ms: u64,
}

fn default_temperature() -> f64 {
    0.3
}
fn default_top_p() -> f64 {
    1.0
}
fn default_max_output_tokens() -> u32 {
    1024
}
fn default_max_attempts() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    1000
}
fn default_timeout_ms() -> u64 {
    60_000
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            model_name: "gpt-3.5-turbo".into(),
            temperature: default_temperature(),
            top_p: default_top_p(),
            max_output_tokens: default_max_output_tokens(),
            endpoint_url: String::new(),
            api_key_ref: String::new(),
            max_attempts: default_max_attempts(),
            backoff_base_ms: default_backoff_ms(),
            request_timeout_ms: default_timeout_ms(),
        }
    }
}

impl ModelConfig {
    /// Check the decoding-parameter ranges.
    pub fn validate(&self) -> Result<(), BackendError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(BackendError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(BackendError::InvalidRequest(format!(
                "top_p {} outside (0, 1]",
                self.top_p
            )));
        }
        Ok(())
    }

    pub fn request_timeout(&self) -> Duration {
        Duration::from_millis(self.request_timeout_ms)
    }
}

/// Reject message lists that violate the exchange invariant: non-empty,
/// with the last request message authored by user or system.
pub(crate) fn validate_messages(messages: &[ChatMessage]) -> Result<(), BackendError> {
    match messages.last() {
        None => Err(BackendError::InvalidRequest("empty message list".into())),
        Some(m) if m.role == Role::Assistant => Err(BackendError::InvalidRequest(
            "last request message must have role user or system".into(),
        )),
        Some(_) => Ok(()),
    }
}

/// Chat-completion backend. Implementations are safe for concurrent calls.
pub trait ChatBackend: Send + Sync {
    fn complete(
        &self,
        config: &ModelConfig,
        messages: &[ChatMessage],
    ) -> Result<ChatExchange, BackendError>;
}

impl<T: ChatBackend + ?Sized> ChatBackend for std::sync::Arc<T> {
    fn complete(
        &self,
        config: &ModelConfig,
        messages: &[ChatMessage],
    ) -> Result<ChatExchange, BackendError> {
        (**self).complete(config, messages)
    }
}

impl<T: ChatBackend + ?Sized> ChatBackend for Box<T> {
    fn complete(
        &self,
        config: &ModelConfig,
        messages: &[ChatMessage],
    ) -> Result<ChatExchange, BackendError> {
        (**self).complete(config, messages)
    }
}

/// Stable content hash over the request: model name, decoding parameters,
/// and the canonicalized message list. Equal requests produce equal keys;
/// changing any component changes the key.
pub fn cache_key(config: &ModelConfig, messages: &[ChatMessage]) -> String {
    #[derive(Serialize)]
    struct KeyMaterial<'a> {
        model_name: &'a str,
        temperature: f64,
        top_p: f64,
        messages: &'a [ChatMessage],
    }
    let material = KeyMaterial {
        model_name: &config.model_name,
        temperature: config.temperature,
        top_p: config.top_p,
        messages,
    };
    let json = serde_json::to_string(&material).expect("key material serializes");
    let mut hasher = Sha256::new();
    hasher.update(json.as_bytes());
    hex::encode(hasher.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cache_key_is_deterministic() {
        let config = ModelConfig::default();
        let msgs = vec![ChatMessage::system("s"), ChatMessage::user("what is 2+2?")];
        assert_eq!(cache_key(&config, &msgs), cache_key(&config, &msgs));
    }

    #[test]
    fn cache_key_sensitive_to_temperature() {
        let a = ModelConfig::default();
        let mut b = a.clone();
        b.temperature = 0.4;
        let msgs = vec![ChatMessage::user("q")];
        assert_ne!(cache_key(&a, &msgs), cache_key(&b, &msgs));
    }

    #[test]
    fn cache_key_sensitive_to_message_order() {
        let config = ModelConfig::default();
        let a = vec![ChatMessage::user("one"), ChatMessage::user("two")];
        let b = vec![ChatMessage::user("two"), ChatMessage::user("one")];
        assert_ne!(cache_key(&config, &a), cache_key(&config, &b));
    }

    #[test]
    fn serialized_config_never_contains_key_material() {
        std::env::set_var("RRR_TEST_SECRET", "sk-super-secret");
        let config = ModelConfig {
            api_key_ref: "RRR_TEST_SECRET".into(),
            ..ModelConfig::default()
        };
        let json = serde_json::to_string(&config).unwrap();
        assert!(!json.contains("sk-super-secret"));
        assert!(json.contains("RRR_TEST_SECRET"));
    }

    #[test]
    fn message_list_invariants() {
        assert!(validate_messages(&[]).is_err());
        assert!(validate_messages(&[ChatMessage::assistant("a")]).is_err());
        assert!(validate_messages(&[ChatMessage::user("u")]).is_ok());
        assert!(validate_messages(&[ChatMessage::assistant("a"), ChatMessage::user("u")]).is_ok());
    }

    #[test]
    fn decoding_parameter_ranges() {
        let mut c = ModelConfig::default();
        assert!(c.validate().is_ok());
        c.temperature = 2.5;
        assert!(c.validate().is_err());
        c.temperature = 0.3;
        c.top_p = 0.0;
        assert!(c.validate().is_err());
    }
}
