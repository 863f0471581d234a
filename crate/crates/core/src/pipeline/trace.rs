//! Serialized record of one pipeline run, for replay and audit.
//!
//! Traces serialize to a stable JSON layout (struct field order), one
//! object per run. The canonical form used for digesting zeroes out
//! wall-clock data so that replaying the same scripted run reproduces the
//! digest byte for byte.

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{OriginalQuery, SubQueryStep};

/// Which kind of external service an invocation hit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallKind {
    Model,
    Retriever,
}

/// One entry of the backend call log: digests of what was sent and what
/// came back, never the payloads themselves.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendCall {
    pub kind: CallKind,
    pub prompt_digest: String,
    pub response_digest: String,
}

impl BackendCall {
    pub fn new(kind: CallKind, prompt: &str, response: &str) -> Self {
        Self {
            kind,
            prompt_digest: content_digest(prompt),
            response_digest: content_digest(response),
        }
    }
}

/// Hex SHA-256 of a text payload.
pub fn content_digest(text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    hex::encode(hasher.finalize())
}

/// Complete record of one pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineTrace {
    /// Trace file layout version.
    pub schema_version: u32,
    /// The query the run answered.
    pub query: OriginalQuery,
    /// Pipeline variant that produced the trace.
    pub variant: String,
    /// Digest pinning the model configuration and prompt set.
    pub model_config_digest: String,
    /// Completed steps, equal to the terminal state's completed steps.
    pub steps: Vec<SubQueryStep>,
    /// The aggregated final answer; non-empty on successful completion.
    pub final_answer: String,
    /// When the run started (excluded from the canonical form).
    pub started_at: DateTime<Utc>,
    /// Total wall-clock duration in milliseconds (excluded from the
    /// canonical form).
    pub total_duration_ms: u64,
    /// Ordered record of every model/retriever invocation.
    pub backend_call_log: Vec<BackendCall>,
    /// Abort reason when the run failed; the partial trace is preserved.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aborted: Option<String>,
}

impl PipelineTrace {
    pub const SCHEMA_VERSION: u32 = 1;

    /// Start an empty trace for a query.
    pub fn new(
        query: OriginalQuery,
        variant: impl Into<String>,
        model_config_digest: impl Into<String>,
    ) -> Self {
        Self {
            schema_version: Self::SCHEMA_VERSION,
            query,
            variant: variant.into(),
            model_config_digest: model_config_digest.into(),
            steps: Vec::new(),
            final_answer: String::new(),
            started_at: Utc::now(),
            total_duration_ms: 0,
            backend_call_log: Vec::new(),
            aborted: None,
        }
    }

    /// Number of retriever invocations recorded in the call log.
    pub fn retriever_calls(&self) -> usize {
        self.backend_call_log
            .iter()
            .filter(|c| c.kind == CallKind::Retriever)
            .count()
    }

    /// Number of model invocations recorded in the call log.
    pub fn model_calls(&self) -> usize {
        self.backend_call_log
            .iter()
            .filter(|c| c.kind == CallKind::Model)
            .count()
    }

    /// Pretty JSON for trace files, with RFC 3339 timestamps.
    pub fn to_json_pretty(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }

    /// Parse a trace file.
    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    /// Canonical serialization: the trace with all wall-clock data zeroed
    /// and a fixed epoch timestamp, rendered as compact JSON. Two runs of
    /// the same scripted fixture produce identical canonical bytes.
    pub fn canonical_json(&self) -> serde_json::Result<String> {
        let mut c = self.clone();
        c.started_at = DateTime::<Utc>::UNIX_EPOCH;
        c.total_duration_ms = 0;
        for step in &mut c.steps {
            step.duration_ms = 0;
        }
        serde_json::to_string(&c)
    }

    /// Hex SHA-256 of the canonical serialization.
    pub fn canonical_digest(&self) -> serde_json::Result<String> {
        Ok(content_digest(&self.canonical_json()?))
    }

    /// RFC 3339 rendering of the start time, as written to trace files.
    pub fn started_at_rfc3339(&self) -> String {
        self.started_at.to_rfc3339_opts(SecondsFormat::Millis, true)
    }
}
