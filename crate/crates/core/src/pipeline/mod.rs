//! Domain types shared across the pipeline and the reasoning-state
//! transition machinery.
//!
//! A run starts from an [`OriginalQuery`], advances through an append-only
//! sequence of [`SubQueryStep`]s held by an immutable [`ReasoningState`],
//! and ends in a serializable [`PipelineTrace`].

mod trace;

pub use trace::{content_digest, BackendCall, CallKind, PipelineTrace};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::retrieval::Document;

/// Errors from state construction and transitions.
#[derive(Debug, Error)]
pub enum StateError {
    /// Input failed a domain invariant (empty question, zero budget, ...).
    #[error("validation: {0}")]
    Validation(String),
    /// A transition was attempted on a terminal state.
    #[error("state machine violation: state is terminal, no further transitions accepted")]
    TerminalState,
    /// Step indices within a trace must be consecutive starting at 1.
    #[error("ordering: expected step index {expected}, got {got}")]
    NonConsecutiveIndex { expected: usize, got: usize },
    /// Steps must carry a refined answer before they enter the state.
    #[error("step {index} is not finalized: refined answer is empty")]
    StepNotFinalized { index: usize },
}

/// The user question with its context and temporal anchor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OriginalQuery {
    /// Opaque identifier, carried through traces and reports.
    pub question_id: String,
    /// The question text itself.
    pub question_text: String,
    /// Optional free-text background available at the start.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
    /// Optional "as of" calendar date applied to sub-query rewrites.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temporal_anchor: Option<NaiveDate>,
}

impl OriginalQuery {
    /// Build a validated query. The question must be non-empty after
    /// whitespace trimming.
    pub fn new(
        question_id: impl Into<String>,
        question_text: impl Into<String>,
    ) -> Result<Self, StateError> {
        let question_text = question_text.into();
        if question_text.trim().is_empty() {
            return Err(StateError::Validation("question text is empty".into()));
        }
        Ok(Self {
            question_id: question_id.into(),
            question_text,
            context: None,
            temporal_anchor: None,
        })
    }

    /// Attach background context.
    pub fn with_context(mut self, context: impl Into<String>) -> Self {
        self.context = Some(context.into());
        self
    }

    /// Attach the temporal anchor date.
    pub fn with_anchor(mut self, anchor: NaiveDate) -> Self {
        self.temporal_anchor = Some(anchor);
        self
    }

    /// Render the anchor as a "Month Year" string, e.g. `June 2024`.
    ///
    /// Rewritten sub-queries are expected to contain this string whenever
    /// the anchor is present; the leading "as of"/"in" wording is left to
    /// the model, matching how anchored rewrites phrase it.
    pub fn anchor_text(&self) -> Option<String> {
        self.temporal_anchor.map(|d| d.format("%B %Y").to_string())
    }
}

/// One completed reasoning step: the rewritten sub-query, the retrieval
/// decision, any retrieved documents, and the refined answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubQueryStep {
    /// 1-based position within the trace.
    pub index: usize,
    /// The self-contained sub-query produced by the rewrite.
    pub rewritten_query: String,
    /// The model's anticipated answer; empty when retrieval was required.
    pub anticipated_answer: String,
    /// Whether the retrieval gate fired for this step.
    pub needs_retrieval: bool,
    /// Retrieved documents, empty unless `needs_retrieval`.
    pub documents: Vec<Document>,
    /// The per-step refined answer.
    pub refined_answer: String,
    /// Set when the step carried the termination marker.
    #[serde(default)]
    pub final_marker: bool,
    /// Wall-clock duration of the step in milliseconds.
    #[serde(default)]
    pub duration_ms: u64,
}

impl SubQueryStep {
    fn validate(&self) -> Result<(), StateError> {
        if !self.needs_retrieval && !self.documents.is_empty() {
            return Err(StateError::Validation(format!(
                "step {}: documents present although retrieval was not required",
                self.index
            )));
        }
        if self.refined_answer.trim().is_empty() {
            return Err(StateError::StepNotFinalized { index: self.index });
        }
        Ok(())
    }
}

/// Accumulated reasoning state: the query, the ordered completed steps,
/// and the terminal flag.
///
/// States are immutable; [`transition`] returns a new state and never
/// mutates its input. The terminal flag is monotone: once set, no further
/// transition is accepted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningState {
    /// The original query this chain answers.
    pub query: OriginalQuery,
    /// Completed steps, in order.
    pub completed_steps: Vec<SubQueryStep>,
    /// No further transitions accepted once set.
    pub terminal: bool,
    /// Maximum number of steps this chain may take.
    pub step_budget: usize,
}

/// One (sub-query, answer) pair of the reasoning history.
///
/// The answer the paper's history carries is the anticipated one; the
/// refined answer is exposed as well because later rewrites condition on
/// it when available.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HistoryPair {
    pub sub_query: String,
    pub anticipated_answer: String,
    pub refined_answer: String,
}

impl HistoryPair {
    /// The answer to show the model: the refined answer when present,
    /// otherwise the anticipated one.
    pub fn answer(&self) -> &str {
        if self.refined_answer.trim().is_empty() {
            &self.anticipated_answer
        } else {
            &self.refined_answer
        }
    }
}

/// Build the initial reasoning state for a query.
pub fn initial_state(
    query: OriginalQuery,
    step_budget: usize,
) -> Result<ReasoningState, StateError> {
    if step_budget == 0 {
        return Err(StateError::Validation(
            "step budget must be at least 1".into(),
        ));
    }
    if query.question_text.trim().is_empty() {
        return Err(StateError::Validation("question text is empty".into()));
    }
    Ok(ReasoningState {
        query,
        completed_steps: Vec::new(),
        terminal: false,
        step_budget,
    })
}

/// Append a finalized step, producing the successor state.
///
/// The successor becomes terminal when the step budget is reached or the
/// step carries the termination marker.
pub fn transition(
    state: &ReasoningState,
    step: SubQueryStep,
) -> Result<ReasoningState, StateError> {
    if state.terminal {
        return Err(StateError::TerminalState);
    }
    let expected = state.completed_steps.len() + 1;
    if step.index != expected {
        return Err(StateError::NonConsecutiveIndex {
            expected,
            got: step.index,
        });
    }
    step.validate()?;

    let mut next = state.clone();
    let is_final = step.final_marker;
    next.completed_steps.push(step);
    next.terminal = is_final || next.completed_steps.len() >= next.step_budget;
    Ok(next)
}

/// The ordered (sub-query, answer) history of a state.
pub fn history_view(state: &ReasoningState) -> Vec<HistoryPair> {
    state
        .completed_steps
        .iter()
        .map(|s| HistoryPair {
            sub_query: s.rewritten_query.clone(),
            anticipated_answer: s.anticipated_answer.clone(),
            refined_answer: s.refined_answer.clone(),
        })
        .collect()
}
