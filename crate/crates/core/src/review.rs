//! The review phase: sub-query planning, dynamic rewriting with temporal
//! anchoring, the retrieval indicator, and the step loop that drives one
//! full review-then-refine run.
//!
//! Review model output uses a labeled plain-text protocol:
//!
//! ```text
//! Query: <rewritten sub-query>
//! Answer: <anticipated answer, or [need_retrieval]>
//! [final]            (optional, marks the last step)
//! ```
//!
//! A reply consisting of the single line `[final]` terminates the loop
//! without a new step. Output that does not parse earns one structured
//! reprompt, then a hard error; silent salvage would corrupt traces.

use std::time::Instant;

use thiserror::Error;

use crate::backend::{BackendError, ChatBackend, ChatMessage, ModelConfig};
use crate::pipeline::{
    history_view, initial_state, transition, HistoryPair, OriginalQuery, PipelineTrace,
    ReasoningState, StateError, SubQueryStep,
};
use crate::prompts::{TemplateError, TemplateSet};
use crate::refine::{aggregate, refine_step_answer, render_history, AggregationInput, RefineError};
use crate::retrieval::{retrieve, RetrievalError, Retriever, RetrieverConfig};
use crate::session::ModelSession;

/// Literal marker the model emits when retrieval is required.
pub const NEED_RETRIEVAL_MARKER: &str = "[need_retrieval]";
/// Literal marker the model emits to terminate the reasoning path.
pub const FINAL_MARKER: &str = "[final]";

#[derive(Debug, Error)]
pub enum ReviewError {
    #[error("model output unparseable as {what} after reprompt; raw output starts with {raw:?}")]
    ModelOutputUnparseable { what: &'static str, raw: String },
    #[error("rewritten query {query:?} is missing the temporal anchor {anchor:?} after corrective reprompt")]
    AnchorMissing { query: String, anchor: String },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

/// Parsed review output for one step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReviewOutcome {
    /// The rewritten sub-query; empty only for a bare terminate reply.
    pub rewritten_query: String,
    /// Anticipated answer; empty when retrieval is required.
    pub anticipated_answer: String,
    /// The retrieval indicator parsed from the marker.
    pub needs_retrieval: bool,
    /// The model emitted the final marker.
    pub terminate: bool,
    /// Unmodified model output, kept for audit.
    pub raw_model_text: String,
}

/// Ablation switches for the main pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PipelineOptions {
    /// Plan an initial decomposition and run multiple steps.
    pub decompose: bool,
    /// Honor the retrieval indicator; disabled means the retriever is
    /// never invoked.
    pub adaptive_retrieval: bool,
    /// Use the model-rewritten sub-queries; disabled pins each step to
    /// the verbatim plan text.
    pub dynamic_rewrite: bool,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            decompose: true,
            adaptive_retrieval: true,
            dynamic_rewrite: true,
        }
    }
}

/// Pipeline-level run settings.
#[derive(Debug, Clone)]
pub struct RunConfig {
    /// Maximum reasoning steps per question.
    pub step_budget: usize,
    pub retriever: RetrieverConfig,
    pub options: PipelineOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            step_budget: 8,
            retriever: RetrieverConfig::default(),
            options: PipelineOptions::default(),
        }
    }
}

/// Everything a run needs, bundled to keep signatures flat.
pub struct PipelineContext<'a> {
    pub backend: &'a dyn ChatBackend,
    pub retriever: Option<&'a dyn Retriever>,
    pub model: &'a ModelConfig,
    pub templates: &'a TemplateSet,
    pub config: &'a RunConfig,
    /// Label recorded in the trace (e.g. `rrr_full`).
    pub variant: &'a str,
}

/// What went wrong inside a run.
#[derive(Debug, Error)]
pub enum StepError {
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Review(#[from] ReviewError),
    #[error(transparent)]
    Refine(#[from] RefineError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    State(#[from] StateError),
    #[error("retrieval required at step {0} but no retriever is configured")]
    NoRetriever(usize),
    #[error("review terminated before any step completed; nothing to aggregate")]
    EmptyReasoningPath,
}

/// A failed run: the error annotated with the step index, plus the
/// partial trace preserved for inspection.
#[derive(Debug, Error)]
#[error("pipeline aborted{}: {source}", step_display(.step_index))]
pub struct TraceAbort {
    pub step_index: Option<usize>,
    #[source]
    pub source: StepError,
    pub partial: Box<PipelineTrace>,
}

fn step_display(step: &Option<usize>) -> String {
    match step {
        Some(i) => format!(" at step {i}"),
        None => String::new(),
    }
}

/// Digest pinning the model configuration and the prompt set for a run.
pub fn config_digest(model: &ModelConfig, templates: &TemplateSet) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    hasher.update(
        serde_json::to_string(model)
            .expect("model config serializes")
            .as_bytes(),
    );
    hasher.update(b"\n");
    hasher.update(templates.set_hash().as_bytes());
    hex::encode(hasher.finalize())
}

fn anchor_instruction(query: &OriginalQuery) -> String {
    match query.anchor_text() {
        Some(anchor) => {
            format!(" Append the reference time \"as of {anchor}\" to every sub-query.")
        }
        None => String::new(),
    }
}

fn plan_anchor_line(query: &OriginalQuery) -> String {
    match query.anchor_text() {
        Some(anchor) => {
            format!("\nTreat \"{anchor}\" as the reference time for any time-dependent fact.\n")
        }
        None => String::new(),
    }
}

/// Parse a numbered-list or JSON plan into step descriptions.
fn parse_plan(text: &str) -> Vec<String> {
    let trimmed = strip_code_fence(text.trim());

    // JSON object in the {"step 1": "..."} layout, or a plain array.
    if let Ok(value) = serde_json::from_str::<serde_json::Value>(trimmed) {
        match value {
            serde_json::Value::Array(items) => {
                let steps: Vec<String> = items
                    .into_iter()
                    .filter_map(|v| v.as_str().map(str::to_string))
                    .filter(|s| !s.trim().is_empty())
                    .collect();
                if !steps.is_empty() {
                    return steps;
                }
            }
            serde_json::Value::Object(map) => {
                let mut numbered: Vec<(usize, String)> = map
                    .iter()
                    .filter_map(|(k, v)| {
                        let n: usize = k.trim().trim_start_matches("step").trim().parse().ok()?;
                        Some((n, v.as_str()?.to_string()))
                    })
                    .collect();
                if !numbered.is_empty() {
                    numbered.sort_by_key(|(n, _)| *n);
                    return numbered.into_iter().map(|(_, s)| s).collect();
                }
            }
            _ => {}
        }
    }

    // Numbered lines: "1. text", "2) text", "step 3: text".
    let mut steps = Vec::new();
    for line in trimmed.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let rest = line
            .strip_prefix("step ")
            .or_else(|| line.strip_prefix("Step "))
            .unwrap_or(line);
        let digits: String = rest.chars().take_while(char::is_ascii_digit).collect();
        if digits.is_empty() {
            continue;
        }
        let after = rest[digits.len()..]
            .trim_start_matches(['.', ')', ':'])
            .trim();
        if !after.is_empty() {
            steps.push(after.to_string());
        }
    }
    steps
}

fn strip_code_fence(text: &str) -> &str {
    let t = text.trim();
    if let Some(inner) = t.strip_prefix("```") {
        if let Some(end) = inner.rfind("```") {
            let inner = &inner[..end];
            return inner
                .trim_start_matches(|c: char| c.is_ascii_alphabetic())
                .trim();
        }
    }
    t
}

/// Produce the advisory initial decomposition for a question.
///
/// The plan seeds per-step hints; the loop may extend or deviate from it
/// as intermediate answers come in.
pub fn plan_decomposition(
    session: &ModelSession<'_>,
    query: &OriginalQuery,
) -> Result<Vec<String>, ReviewError> {
    let prompt = session.render(
        "plan",
        &[
            ("question", query.question_text.as_str()),
            ("anchor_line", plan_anchor_line(query).as_str()),
        ],
    )?;
    let exchange = session.call_user(prompt.clone())?;
    let steps = parse_plan(&exchange.response_text);
    if !steps.is_empty() {
        return Ok(steps);
    }

    // One structured reprompt, then hard error.
    let messages = vec![
        ChatMessage::user(prompt),
        ChatMessage::assistant(exchange.response_text.clone()),
        ChatMessage::user(
            "Your previous reply did not follow the required format. Respond again with one \
             sub-question per line, each line starting with its 1-based step number followed \
             by a period. No other text.",
        ),
    ];
    let retry = session.call(messages)?;
    let steps = parse_plan(&retry.response_text);
    if steps.is_empty() {
        return Err(ReviewError::ModelOutputUnparseable {
            what: "decomposition plan",
            raw: preview(&retry.response_text),
        });
    }
    Ok(steps)
}

fn preview(text: &str) -> String {
    text.chars().take(120).collect()
}

/// Parse one review reply into an outcome. `None` means unparseable.
fn parse_review_output(text: &str) -> Option<ReviewOutcome> {
    let raw = text.to_string();
    let mut query = None;
    let mut answer: Option<String> = None;
    let mut terminate = false;

    for line in text.lines() {
        let line = line.trim();
        if line == FINAL_MARKER {
            terminate = true;
        } else if let Some(rest) = line.strip_prefix("Query:") {
            if query.is_none() {
                query = Some(rest.trim().to_string());
            }
        } else if let Some(rest) = line.strip_prefix("Answer:") {
            if answer.is_none() {
                answer = Some(rest.trim().to_string());
            }
        }
    }

    match (query, answer) {
        (None, None) if terminate => Some(ReviewOutcome {
            rewritten_query: String::new(),
            anticipated_answer: String::new(),
            needs_retrieval: false,
            terminate: true,
            raw_model_text: raw,
        }),
        (Some(q), Some(a)) if !q.is_empty() => {
            let needs_retrieval = a.contains(NEED_RETRIEVAL_MARKER);
            if needs_retrieval && terminate {
                // Contradicts the outcome contract; force a reprompt.
                return None;
            }
            Some(ReviewOutcome {
                rewritten_query: q,
                anticipated_answer: if needs_retrieval { String::new() } else { a },
                needs_retrieval,
                terminate,
                raw_model_text: raw,
            })
        }
        _ => None,
    }
}

fn render_plan_hint(hint: Option<&str>) -> String {
    match hint {
        Some(h) => {
            format!("\nSuggested next step (you may deviate if the history demands it):\n\n{h}\n")
        }
        None => String::new(),
    }
}

/// One review interaction: build the prompt from the original question,
/// the history, the anchor clause, and the optional plan hint; parse the
/// reply into a [`ReviewOutcome`].
pub fn review_step(
    session: &ModelSession<'_>,
    query: &OriginalQuery,
    state: &ReasoningState,
    plan_hint: Option<&str>,
) -> Result<ReviewOutcome, ReviewError> {
    review_step_inner(session, query, state, plan_hint, true)
}

fn review_step_inner(
    session: &ModelSession<'_>,
    query: &OriginalQuery,
    state: &ReasoningState,
    plan_hint: Option<&str>,
    enforce_anchor: bool,
) -> Result<ReviewOutcome, ReviewError> {
    let history = history_view(state);
    let history_text = render_history(&history);
    let prompt = session.render(
        "review",
        &[
            ("question", query.question_text.as_str()),
            ("history", history_text.as_str()),
            ("anchor_instruction", anchor_instruction(query).as_str()),
            ("plan_hint", render_plan_hint(plan_hint).as_str()),
        ],
    )?;

    let exchange = session.call_user(prompt.clone())?;
    let mut outcome = parse_review_output(&exchange.response_text);

    if outcome.is_none() {
        let reprompt = session.render("review_reprompt", &[("extra", "")])?;
        let retry = session.call(vec![
            ChatMessage::user(prompt.clone()),
            ChatMessage::assistant(exchange.response_text.clone()),
            ChatMessage::user(reprompt),
        ])?;
        outcome = parse_review_output(&retry.response_text);
        if outcome.is_none() {
            return Err(ReviewError::ModelOutputUnparseable {
                what: "review step",
                raw: preview(&retry.response_text),
            });
        }
    }
    let outcome = outcome.expect("checked above");

    // Temporal anchoring is a prompt contract: with an anchor present,
    // every rewritten query must contain the rendered anchor text. One
    // corrective reprompt, then a hard error.
    if enforce_anchor && !outcome.rewritten_query.is_empty() {
        if let Some(anchor) = query.anchor_text() {
            if !outcome.rewritten_query.contains(&anchor) {
                let extra = format!("The sub-query must contain the reference time \"{anchor}\".");
                let reprompt = session.render("review_reprompt", &[("extra", extra.as_str())])?;
                let retry = session.call(vec![
                    ChatMessage::user(prompt),
                    ChatMessage::assistant(outcome.raw_model_text.clone()),
                    ChatMessage::user(reprompt),
                ])?;
                let corrected = parse_review_output(&retry.response_text).ok_or_else(|| {
                    ReviewError::ModelOutputUnparseable {
                        what: "review step",
                        raw: preview(&retry.response_text),
                    }
                })?;
                if !corrected.rewritten_query.contains(&anchor) {
                    return Err(ReviewError::AnchorMissing {
                        query: corrected.rewritten_query,
                        anchor,
                    });
                }
                return Ok(corrected);
            }
        }
    }

    Ok(outcome)
}

/// Execute one full review-then-refine run: plan once, then loop
/// review -> gated retrieve -> refine -> transition until terminal, then
/// aggregate. On failure the partial trace is preserved in the error.
pub fn run_review_refine(
    query: &OriginalQuery,
    ctx: &PipelineContext<'_>,
) -> Result<PipelineTrace, TraceAbort> {
    let session = ModelSession::new(ctx.backend, ctx.model, ctx.templates);
    let digest = config_digest(ctx.model, ctx.templates);
    let mut trace = PipelineTrace::new(query.clone(), ctx.variant, digest);
    let run_started = Instant::now();

    let abort = |trace: &mut PipelineTrace,
                 session: &ModelSession<'_>,
                 step_index: Option<usize>,
                 source: StepError| {
        trace.backend_call_log = session.drain_log();
        trace.total_duration_ms = run_started.elapsed().as_millis() as u64;
        trace.aborted = Some(source.to_string());
        TraceAbort {
            step_index,
            source,
            partial: Box::new(trace.clone()),
        }
    };

    if ctx.config.step_budget == 0 {
        return Err(abort(
            &mut trace,
            &session,
            None,
            StepError::Config("step_budget must be at least 1".into()),
        ));
    }
    if let Err(e) = ctx.config.retriever.validate() {
        return Err(abort(&mut trace, &session, None, StepError::Retrieval(e)));
    }

    let options = ctx.config.options;

    // Plan once. With decomposition disabled the whole question becomes
    // the single step and the budget clamps to 1.
    let (plan, budget) = if options.decompose {
        match plan_decomposition(&session, query) {
            Ok(plan) => (plan, ctx.config.step_budget),
            Err(e) => return Err(abort(&mut trace, &session, None, StepError::Review(e))),
        }
    } else {
        (vec![query.question_text.clone()], 1)
    };

    let mut state = match initial_state(query.clone(), budget) {
        Ok(s) => s,
        Err(e) => return Err(abort(&mut trace, &session, None, StepError::State(e))),
    };

    while !state.terminal {
        let index = state.completed_steps.len() + 1;
        let step_started = Instant::now();
        let hint = plan.get(index - 1).map(String::as_str);

        let outcome =
            match review_step_inner(&session, query, &state, hint, options.dynamic_rewrite) {
                Ok(o) => o,
                Err(e) => {
                    return Err(abort(
                        &mut trace,
                        &session,
                        Some(index),
                        StepError::Review(e),
                    ))
                }
            };

        if outcome.terminate && outcome.rewritten_query.is_empty() {
            if state.completed_steps.is_empty() {
                return Err(abort(
                    &mut trace,
                    &session,
                    Some(index),
                    StepError::EmptyReasoningPath,
                ));
            }
            // Model-driven stop without a new step.
            state.terminal = true;
            break;
        }

        let effective_query = if options.dynamic_rewrite {
            outcome.rewritten_query.clone()
        } else {
            hint.map(str::to_string)
                .unwrap_or_else(|| outcome.rewritten_query.clone())
        };

        let indicator = options.adaptive_retrieval && outcome.needs_retrieval;
        let documents = if indicator {
            let Some(retriever) = ctx.retriever else {
                return Err(abort(
                    &mut trace,
                    &session,
                    Some(index),
                    StepError::NoRetriever(index),
                ));
            };
            match retrieve(retriever, &effective_query, true, &ctx.config.retriever) {
                Ok(docs) => {
                    session.log_retrieval(&effective_query, &docs);
                    docs
                }
                Err(e) => {
                    return Err(abort(
                        &mut trace,
                        &session,
                        Some(index),
                        StepError::Retrieval(e),
                    ))
                }
            }
        } else {
            Vec::new()
        };

        let history = history_view(&state);
        let refined = match refine_step_answer(
            &session,
            &effective_query,
            &outcome.anticipated_answer,
            &documents,
            &history,
        ) {
            Ok(a) => a,
            Err(e) => {
                return Err(abort(
                    &mut trace,
                    &session,
                    Some(index),
                    StepError::Refine(e),
                ))
            }
        };

        let step = SubQueryStep {
            index,
            rewritten_query: effective_query,
            anticipated_answer: outcome.anticipated_answer,
            needs_retrieval: indicator,
            documents,
            refined_answer: refined,
            final_marker: outcome.terminate,
            duration_ms: step_started.elapsed().as_millis() as u64,
        };
        state = match transition(&state, step) {
            Ok(s) => s,
            Err(e) => {
                return Err(abort(
                    &mut trace,
                    &session,
                    Some(index),
                    StepError::State(e),
                ))
            }
        };
        // Mirror completed steps into the trace so aborts preserve them.
        trace.steps = state.completed_steps.clone();
    }

    let pairs: Vec<(String, String)> = history_view(&state)
        .iter()
        .map(|p: &HistoryPair| (p.sub_query.clone(), p.answer().to_string()))
        .collect();
    let input = AggregationInput {
        original_question: query.question_text.clone(),
        sub_answers: pairs,
        temporal_anchor: query.temporal_anchor,
    };
    let final_answer = match aggregate(&session, &input) {
        Ok(a) => a,
        Err(e) => {
            let n = state.completed_steps.len();
            return Err(abort(&mut trace, &session, Some(n), StepError::Refine(e)));
        }
    };

    trace.steps = state.completed_steps;
    trace.final_answer = final_answer;
    trace.backend_call_log = session.drain_log();
    trace.total_duration_ms = run_started.elapsed().as_millis() as u64;
    Ok(trace)
}
