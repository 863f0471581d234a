//! Deterministic scripted backend for tests and fixture replay.
//!
//! Two script shapes are supported:
//!
//! - a *transcript*: an ordered list of responses consumed one per call;
//! - a *rule set*: `(match, response)` pairs where a rule fires when every
//!   listed substring appears in the rendered prompt. The first matching
//!   rule wins, so overlapping patterns are resolved by order.

use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{
    render_messages, validate_messages, BackendError, ChatBackend, ChatExchange, ChatMessage,
    ModelConfig,
};

/// One pattern rule: fires when all `match` substrings occur in the
/// rendered prompt.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptRule {
    #[serde(rename = "match")]
    pub match_all: Vec<String>,
    pub response: String,
}

/// A script file: either a transcript, a rule set, or both (transcript
/// consumed first, rules as fallback is *not* supported — exactly one
/// must be present).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Script {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub transcript: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rules: Vec<ScriptRule>,
}

impl Script {
    pub fn from_transcript(responses: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self {
            transcript: responses.into_iter().map(Into::into).collect(),
            rules: Vec::new(),
        }
    }

    pub fn from_rules(rules: Vec<ScriptRule>) -> Self {
        Self {
            transcript: Vec::new(),
            rules,
        }
    }

    /// Load a script from a JSON file.
    pub fn from_json_file(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            BackendError::InvalidRequest(format!("cannot read script {}: {e}", path.display()))
        })?;
        let script: Script = serde_json::from_str(&text).map_err(|e| {
            BackendError::InvalidRequest(format!("invalid script {}: {e}", path.display()))
        })?;
        script.validate()?;
        Ok(script)
    }

    fn validate(&self) -> Result<(), BackendError> {
        match (self.transcript.is_empty(), self.rules.is_empty()) {
            (true, true) => Err(BackendError::InvalidRequest(
                "script must define either a transcript or rules".into(),
            )),
            (false, false) => Err(BackendError::InvalidRequest(
                "script must define a transcript or rules, not both".into(),
            )),
            _ => Ok(()),
        }
    }
}

enum Mode {
    Transcript(Vec<String>),
    Rules(Vec<ScriptRule>),
}

/// Backend whose `complete` consumes a [`Script`] deterministically.
pub struct ScriptedBackend {
    mode: Mode,
    cursor: Mutex<usize>,
    calls: Mutex<Vec<Vec<ChatMessage>>>,
}

impl ScriptedBackend {
    pub fn from_script(script: Script) -> Result<Self, BackendError> {
        script.validate()?;
        let mode = if script.rules.is_empty() {
            Mode::Transcript(script.transcript)
        } else {
            Mode::Rules(script.rules)
        };
        Ok(Self {
            mode,
            cursor: Mutex::new(0),
            calls: Mutex::new(Vec::new()),
        })
    }

    /// Ordered responses, consumed one per call.
    pub fn transcript(responses: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self::from_script(Script::from_transcript(responses)).expect("non-empty transcript")
    }

    /// First-match-wins rule set.
    pub fn rules(rules: Vec<ScriptRule>) -> Self {
        Self::from_script(Script::from_rules(rules)).expect("non-empty rules")
    }

    /// Number of calls served so far.
    pub fn calls_made(&self) -> usize {
        self.calls.lock().unwrap().len()
    }

    /// Copies of every message list received, in call order.
    pub fn recorded_calls(&self) -> Vec<Vec<ChatMessage>> {
        self.calls.lock().unwrap().clone()
    }

    /// Rendered prompt text of every call, in call order.
    pub fn recorded_prompts(&self) -> Vec<String> {
        self.calls
            .lock()
            .unwrap()
            .iter()
            .map(|m| render_messages(m))
            .collect()
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(
        &self,
        _config: &ModelConfig,
        messages: &[ChatMessage],
    ) -> Result<ChatExchange, BackendError> {
        validate_messages(messages)?;
        self.calls.lock().unwrap().push(messages.to_vec());

        let response = match &self.mode {
            Mode::Transcript(responses) => {
                let mut cursor = self.cursor.lock().unwrap();
                if *cursor >= responses.len() {
                    return Err(BackendError::ScriptExhausted { calls: *cursor });
                }
                let response = responses[*cursor].clone();
                *cursor += 1;
                response
            }
            Mode::Rules(rules) => {
                let prompt = render_messages(messages);
                match rules.iter().find(|r| {
                    r.match_all
                        .iter()
                        .all(|needle| prompt.contains(needle.as_str()))
                }) {
                    Some(rule) => rule.response.clone(),
                    None => {
                        let preview: String = prompt.chars().take(120).collect();
                        return Err(BackendError::NoMatchingRule { preview });
                    }
                }
            }
        };

        Ok(ChatExchange {
            messages: messages.to_vec(),
            response_text: response,
            usage: None,
            latency_ms: 0,
        })
    }
}
