//! OpenAI-compatible chat-completions client over HTTPS.
//!
//! POSTs `{model, messages, temperature, top_p, max_tokens}` with bearer
//! auth and reads `choices[0].message.content`. Transient transport
//! failures and 429/5xx responses are retried with exponential backoff up
//! to the configured attempt count; every request is bounded by the
//! configured deadline.

use std::thread;
use std::time::{Duration, Instant};

use serde::Deserialize;
use serde_json::json;

use super::{
    validate_messages, BackendError, ChatBackend, ChatExchange, ChatMessage, ModelConfig,
    TokenUsage,
};

/// Remote chat-completion backend.
pub struct HttpBackend {
    client: reqwest::blocking::Client,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
    #[serde(default)]
    total_tokens: u64,
}

impl HttpBackend {
    pub fn new() -> Self {
        Self {
            client: reqwest::blocking::Client::new(),
        }
    }

    fn api_key(config: &ModelConfig) -> Result<Option<String>, BackendError> {
        if config.api_key_ref.is_empty() {
            return Ok(None);
        }
        match std::env::var(&config.api_key_ref) {
            Ok(key) if !key.is_empty() => Ok(Some(key)),
            _ => Err(BackendError::Auth {
                endpoint: config.endpoint_url.clone(),
                message: format!("environment variable {} is not set", config.api_key_ref),
            }),
        }
    }

    fn attempt(
        &self,
        config: &ModelConfig,
        messages: &[ChatMessage],
        key: Option<&str>,
    ) -> Result<ChatExchange, AttemptError> {
        let body = json!({
            "model": config.model_name,
            "messages": messages,
            "temperature": config.temperature,
            "top_p": config.top_p,
            "max_tokens": config.max_output_tokens,
        });

        let mut request = self
            .client
            .post(&config.endpoint_url)
            .timeout(config.request_timeout())
            .json(&body);
        if let Some(key) = key {
            request = request.bearer_auth(key);
        }

        let started = Instant::now();
        let response = request
            .send()
            .map_err(|e| AttemptError::Transient(e.to_string()))?;
        let status = response.status();

        if status.as_u16() == 429 {
            return Err(AttemptError::RateLimited);
        }
        if status.as_u16() == 401 || status.as_u16() == 403 {
            return Err(AttemptError::Fatal(BackendError::Auth {
                endpoint: config.endpoint_url.clone(),
                message: format!("endpoint returned {status}"),
            }));
        }
        if status.is_server_error() {
            return Err(AttemptError::Transient(format!(
                "endpoint returned {status}"
            )));
        }
        if !status.is_success() {
            return Err(AttemptError::Fatal(BackendError::MalformedResponse {
                endpoint: config.endpoint_url.clone(),
                message: format!("unexpected status {status}"),
            }));
        }

        let wire: WireResponse = response.json().map_err(|e| {
            AttemptError::Fatal(BackendError::MalformedResponse {
                endpoint: config.endpoint_url.clone(),
                message: format!("body does not parse as a chat completion: {e}"),
            })
        })?;
        let content = wire
            .choices
            .first()
            .and_then(|c| c.message.content.clone())
            .ok_or_else(|| {
                AttemptError::Fatal(BackendError::MalformedResponse {
                    endpoint: config.endpoint_url.clone(),
                    message: "no choices[0].message.content in response".into(),
                })
            })?;

        Ok(ChatExchange {
            messages: messages.to_vec(),
            response_text: content,
            usage: wire.usage.map(|u| TokenUsage {
                prompt_tokens: u.prompt_tokens,
                completion_tokens: u.completion_tokens,
                total_tokens: u.total_tokens,
            }),
            latency_ms: started.elapsed().as_millis() as u64,
        })
    }
}

impl Default for HttpBackend {
    fn default() -> Self {
        Self::new()
    }
}

enum AttemptError {
    Transient(String),
    RateLimited,
    Fatal(BackendError),
}

impl ChatBackend for HttpBackend {
    fn complete(
        &self,
        config: &ModelConfig,
        messages: &[ChatMessage],
    ) -> Result<ChatExchange, BackendError> {
        validate_messages(messages)?;
        config.validate()?;
        if config.endpoint_url.is_empty() {
            return Err(BackendError::InvalidRequest("endpoint_url is empty".into()));
        }
        let key = Self::api_key(config)?;

        let max_attempts = config.max_attempts.max(1);
        let mut last_transient = String::new();
        let mut rate_limited = false;

        for attempt in 1..=max_attempts {
            match self.attempt(config, messages, key.as_deref()) {
                Ok(exchange) => return Ok(exchange),
                Err(AttemptError::Fatal(e)) => return Err(e),
                Err(AttemptError::RateLimited) => {
                    rate_limited = true;
                    last_transient = "429".into();
                }
                Err(AttemptError::Transient(message)) => {
                    rate_limited = false;
                    last_transient = message;
                }
            }
            if attempt < max_attempts {
                let backoff = config.backoff_base_ms.saturating_mul(1 << (attempt - 1));
                thread::sleep(Duration::from_millis(backoff));
            }
        }

        if rate_limited {
            Err(BackendError::RateLimited {
                endpoint: config.endpoint_url.clone(),
                attempts: max_attempts,
            })
        } else {
            Err(BackendError::Transport {
                endpoint: config.endpoint_url.clone(),
                attempts: max_attempts,
                message: last_transient,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unreachable_config() -> ModelConfig {
        ModelConfig {
            endpoint_url: "http://127.0.0.1:1/v1/chat/completions".into(),
            max_attempts: 2,
            backoff_base_ms: 1,
            request_timeout_ms: 500,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn unreachable_endpoint_is_transport_error_after_retries() {
        let backend = HttpBackend::new();
        let msgs = vec![ChatMessage::user("hello")];
        match backend.complete(&unreachable_config(), &msgs) {
            Err(BackendError::Transport {
                attempts: 2,
                endpoint,
                ..
            }) => {
                assert!(endpoint.contains("127.0.0.1"));
            }
            other => panic!("expected transport error, got {other:?}"),
        }
    }

    #[test]
    fn missing_api_key_env_is_auth_error() {
        let backend = HttpBackend::new();
        let config = ModelConfig {
            endpoint_url: "http://127.0.0.1:1/v1".into(),
            api_key_ref: "RRR_DEFINITELY_UNSET_KEY_VAR".into(),
            ..ModelConfig::default()
        };
        match backend.complete(&config, &[ChatMessage::user("hi")]) {
            Err(BackendError::Auth { message, .. }) => {
                assert!(message.contains("RRR_DEFINITELY_UNSET_KEY_VAR"));
            }
            other => panic!("expected auth error, got {other:?}"),
        }
    }

    #[test]
    fn empty_endpoint_rejected_before_network() {
        let backend = HttpBackend::new();
        let config = ModelConfig::default();
        assert!(matches!(
            backend.complete(&config, &[ChatMessage::user("hi")]),
            Err(BackendError::InvalidRequest(_))
        ));
    }
}
