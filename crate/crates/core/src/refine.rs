//! The refine phase: per-step answer refinement fusing retrieved context
//! with model knowledge, and the final aggregation of all intermediate
//! answers into one answer.

use chrono::NaiveDate;
use thiserror::Error;

use crate::backend::BackendError;
use crate::pipeline::HistoryPair;
use crate::prompts::TemplateError;
use crate::retrieval::{snippet, Document};
use crate::session::ModelSession;

/// Character budget for the rendered context block in refine prompts.
pub const CONTEXT_BUDGET_CHARS: usize = 4000;

#[derive(Debug, Error)]
pub enum RefineError {
    #[error("refine produced an empty answer for sub-query {0:?}")]
    RefineEmpty(String),
    #[error("aggregation produced an empty answer")]
    AggregationEmpty,
    #[error("invalid input: {0}")]
    EmptyInput(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

/// Everything the final aggregation sees.
#[derive(Debug, Clone)]
pub struct AggregationInput {
    pub original_question: String,
    /// Ordered (sub-query, refined answer) pairs.
    pub sub_answers: Vec<(String, String)>,
    pub temporal_anchor: Option<NaiveDate>,
}

/// Render history pairs for prompt slots: numbered question/answer lines,
/// or a placeholder when empty.
pub(crate) fn render_history(history: &[HistoryPair]) -> String {
    if history.is_empty() {
        return "(empty)".to_string();
    }
    let mut out = String::new();
    for (i, pair) in history.iter().enumerate() {
        out.push_str(&format!(
            "{}. Q: {}\n   A: {}\n",
            i + 1,
            pair.sub_query,
            pair.answer()
        ));
    }
    out.pop();
    out
}

/// Produce the refined per-step answer.
///
/// With documents present, the prompt carries their snippet as context
/// and instructs grounding in it with an internal-knowledge cross-check.
/// With no documents, the anticipated answer is verified and restated
/// from internal knowledge alone; the prompt contains no context block.
pub fn refine_step_answer(
    session: &ModelSession<'_>,
    step_query: &str,
    anticipated: &str,
    documents: &[Document],
    history: &[HistoryPair],
) -> Result<String, RefineError> {
    if step_query.trim().is_empty() {
        return Err(RefineError::EmptyInput("step query is empty".into()));
    }

    let history_text = render_history(history);
    let prompt = if documents.is_empty() {
        session.render(
            "refine_internal",
            &[
                ("question", step_query),
                ("history", &history_text),
                ("anticipated", anticipated),
            ],
        )?
    } else {
        let context = snippet(documents, CONTEXT_BUDGET_CHARS);
        session.render(
            "refine_context",
            &[
                ("question", step_query),
                ("history", &history_text),
                ("context", &context),
            ],
        )?
    };

    let exchange = session.call_user(prompt)?;
    let answer = exchange.response_text.trim().to_string();
    if answer.is_empty() {
        return Err(RefineError::RefineEmpty(step_query.to_string()));
    }
    Ok(answer)
}

/// Fuse all intermediate answers into the final answer. One model call
/// receives the original question and every (sub-query, answer) pair in
/// step order; single-step inputs still go through the same call.
pub fn aggregate(
    session: &ModelSession<'_>,
    input: &AggregationInput,
) -> Result<String, RefineError> {
    if input.sub_answers.is_empty() {
        return Err(RefineError::EmptyInput(
            "no sub-answers to aggregate".into(),
        ));
    }

    let mut pairs = String::new();
    for (i, (sub_query, answer)) in input.sub_answers.iter().enumerate() {
        pairs.push_str(&format!("{}. Q: {}\n   A: {}\n", i + 1, sub_query, answer));
    }
    pairs.pop();

    let anchor_line = match input.temporal_anchor {
        Some(date) => format!(" Express the answer as of {}.", date.format("%B %Y")),
        None => String::new(),
    };

    let prompt = session.render(
        "aggregate",
        &[
            ("question", &input.original_question),
            ("sub_answers", &pairs),
            ("anchor_line", &anchor_line),
        ],
    )?;

    let exchange = session.call_user(prompt)?;
    let answer = exchange.response_text.trim().to_string();
    if answer.is_empty() {
        return Err(RefineError::AggregationEmpty);
    }
    Ok(answer)
}
