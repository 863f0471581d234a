//! Baseline pipelines and ablation variants.
//!
//! Every variant emits a [`PipelineTrace`] in the same schema as the main
//! pipeline, so evaluation sees one uniform surface. Single-call
//! baselines (vanilla, CoT) produce zero-step traces; retrieve-then-read
//! baselines record one step carrying the retrieved documents; iterative
//! baselines (self-ask, ReAct, SearChain) record one step per parsed
//! sub-question. The `rrr_*` variants run the main pipeline with the
//! corresponding module disabled.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pipeline::{OriginalQuery, PipelineTrace, SubQueryStep};
use crate::refine::CONTEXT_BUDGET_CHARS;
use crate::retrieval::{retrieve, snippet};
use crate::review::{
    config_digest, run_review_refine, PipelineContext, PipelineOptions, StepError, TraceAbort,
};
use crate::session::ModelSession;

/// Iteration cap for the self-ask and ReAct loops.
pub const LOOP_CAP: usize = 8;

/// All registered pipeline variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineVariant {
    Vanilla,
    VanillaWithContext,
    Cot,
    Freshprompt,
    ChainOfNote,
    SelfAsk,
    React,
    Searchain,
    RrrFull,
    RrrNoDecompose,
    RrrNoRetrieval,
    RrrNoRewrite,
    SelfAskNoRetrieval,
    SearchainNoRetrieval,
}

#[derive(Debug, Error)]
pub enum VariantError {
    #[error("unknown variant {0:?}")]
    Unknown(String),
    #[error("variant {0} requires a retriever but none is configured")]
    MissingRetriever(&'static str),
    #[error("empty variant list")]
    EmptyVariantList,
}

impl PipelineVariant {
    pub const ALL: [PipelineVariant; 14] = [
        PipelineVariant::Vanilla,
        PipelineVariant::VanillaWithContext,
        PipelineVariant::Cot,
        PipelineVariant::Freshprompt,
        PipelineVariant::ChainOfNote,
        PipelineVariant::SelfAsk,
        PipelineVariant::React,
        PipelineVariant::Searchain,
        PipelineVariant::RrrFull,
        PipelineVariant::RrrNoDecompose,
        PipelineVariant::RrrNoRetrieval,
        PipelineVariant::RrrNoRewrite,
        PipelineVariant::SelfAskNoRetrieval,
        PipelineVariant::SearchainNoRetrieval,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            PipelineVariant::Vanilla => "vanilla",
            PipelineVariant::VanillaWithContext => "vanilla_with_context",
            PipelineVariant::Cot => "cot",
            PipelineVariant::Freshprompt => "freshprompt",
            PipelineVariant::ChainOfNote => "chain_of_note",
            PipelineVariant::SelfAsk => "self_ask",
            PipelineVariant::React => "react",
            PipelineVariant::Searchain => "searchain",
            PipelineVariant::RrrFull => "rrr_full",
            PipelineVariant::RrrNoDecompose => "rrr_no_decompose",
            PipelineVariant::RrrNoRetrieval => "rrr_no_retrieval",
            PipelineVariant::RrrNoRewrite => "rrr_no_rewrite",
            PipelineVariant::SelfAskNoRetrieval => "self_ask_no_retrieval",
            PipelineVariant::SearchainNoRetrieval => "searchain_no_retrieval",
        }
    }

    pub fn from_name(name: &str) -> Result<Self, VariantError> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == name)
            .ok_or_else(|| VariantError::Unknown(name.to_string()))
    }

    /// Whether the variant's control flow ever invokes the retriever.
    pub fn uses_retrieval(&self) -> bool {
        !matches!(
            self,
            PipelineVariant::Vanilla
                | PipelineVariant::Cot
                | PipelineVariant::RrrNoRetrieval
                | PipelineVariant::SelfAskNoRetrieval
                | PipelineVariant::SearchainNoRetrieval
        )
    }

    /// Template files driving the variant.
    pub fn template_set(&self) -> &'static [&'static str] {
        match self {
            PipelineVariant::Vanilla => &["vanilla"],
            PipelineVariant::VanillaWithContext => &["vanilla_context"],
            PipelineVariant::Cot => &["cot"],
            PipelineVariant::Freshprompt => &["freshprompt"],
            PipelineVariant::ChainOfNote => &["chain_of_note"],
            PipelineVariant::SelfAsk | PipelineVariant::SelfAskNoRetrieval => {
                &["self_ask", "vanilla", "vanilla_context"]
            }
            PipelineVariant::React => &["react", "vanilla"],
            PipelineVariant::Searchain | PipelineVariant::SearchainNoRetrieval => &["searchain"],
            PipelineVariant::RrrFull
            | PipelineVariant::RrrNoDecompose
            | PipelineVariant::RrrNoRetrieval
            | PipelineVariant::RrrNoRewrite => &[
                "plan",
                "review",
                "review_reprompt",
                "refine_context",
                "refine_internal",
                "aggregate",
            ],
        }
    }
}

fn make_abort(
    mut trace: PipelineTrace,
    session: &ModelSession<'_>,
    started: Instant,
    step_index: Option<usize>,
    source: StepError,
) -> TraceAbort {
    trace.backend_call_log = session.drain_log();
    trace.total_duration_ms = started.elapsed().as_millis() as u64;
    trace.aborted = Some(source.to_string());
    TraceAbort {
        step_index,
        source,
        partial: Box::new(trace),
    }
}

fn finish(
    mut trace: PipelineTrace,
    session: &ModelSession<'_>,
    started: Instant,
    final_answer: String,
) -> PipelineTrace {
    trace.final_answer = final_answer;
    trace.backend_call_log = session.drain_log();
    trace.total_duration_ms = started.elapsed().as_millis() as u64;
    trace
}

fn non_empty(answer: String) -> String {
    if answer.trim().is_empty() {
        "(no answer)".to_string()
    } else {
        answer
    }
}

/// Run one variant on one question.
///
/// Variants that use retrieval require a retriever in the context; for
/// variants that do not, any configured retriever is ignored, which
/// guarantees zero retriever invocations.
pub fn run_variant(
    variant: PipelineVariant,
    query: &OriginalQuery,
    ctx: &PipelineContext<'_>,
) -> Result<PipelineTrace, TraceAbort> {
    let rrr_options = |options: PipelineOptions| {
        let config = crate::review::RunConfig {
            step_budget: ctx.config.step_budget,
            retriever: ctx.config.retriever,
            options,
        };
        (config, variant.name())
    };

    match variant {
        PipelineVariant::RrrFull => {
            let (config, name) = rrr_options(PipelineOptions::default());
            run_review_refine(
                query,
                &with_config(ctx, &config, name, variant.uses_retrieval()),
            )
        }
        PipelineVariant::RrrNoDecompose => {
            let (config, name) = rrr_options(PipelineOptions {
                decompose: false,
                ..PipelineOptions::default()
            });
            run_review_refine(
                query,
                &with_config(ctx, &config, name, variant.uses_retrieval()),
            )
        }
        PipelineVariant::RrrNoRetrieval => {
            let (config, name) = rrr_options(PipelineOptions {
                adaptive_retrieval: false,
                ..PipelineOptions::default()
            });
            run_review_refine(
                query,
                &with_config(ctx, &config, name, variant.uses_retrieval()),
            )
        }
        PipelineVariant::RrrNoRewrite => {
            let (config, name) = rrr_options(PipelineOptions {
                dynamic_rewrite: false,
                ..PipelineOptions::default()
            });
            run_review_refine(
                query,
                &with_config(ctx, &config, name, variant.uses_retrieval()),
            )
        }
        PipelineVariant::Vanilla => single_call(variant, "vanilla", query, ctx),
        PipelineVariant::Cot => single_call(variant, "cot", query, ctx),
        PipelineVariant::VanillaWithContext => {
            retrieve_then_read(variant, "vanilla_context", "context", query, ctx)
        }
        PipelineVariant::Freshprompt => {
            retrieve_then_read(variant, "freshprompt", "context", query, ctx)
        }
        PipelineVariant::ChainOfNote => {
            retrieve_then_read(variant, "chain_of_note", "passages", query, ctx)
        }
        PipelineVariant::SelfAsk => self_ask_loop(variant, query, ctx, true),
        PipelineVariant::SelfAskNoRetrieval => self_ask_loop(variant, query, ctx, false),
        PipelineVariant::React => react_loop(variant, query, ctx),
        PipelineVariant::Searchain => searchain_run(variant, query, ctx, true),
        PipelineVariant::SearchainNoRetrieval => searchain_run(variant, query, ctx, false),
    }
}

fn with_config<'a>(
    ctx: &'a PipelineContext<'a>,
    config: &'a crate::review::RunConfig,
    variant: &'a str,
    uses_retrieval: bool,
) -> PipelineContext<'a> {
    PipelineContext {
        backend: ctx.backend,
        retriever: if uses_retrieval { ctx.retriever } else { None },
        model: ctx.model,
        templates: ctx.templates,
        config,
        variant,
    }
}

fn new_trace(
    variant: PipelineVariant,
    query: &OriginalQuery,
    ctx: &PipelineContext<'_>,
) -> PipelineTrace {
    PipelineTrace::new(
        query.clone(),
        variant.name(),
        config_digest(ctx.model, ctx.templates),
    )
}

fn single_call(
    variant: PipelineVariant,
    template: &str,
    query: &OriginalQuery,
    ctx: &PipelineContext<'_>,
) -> Result<PipelineTrace, TraceAbort> {
    let session = ModelSession::new(ctx.backend, ctx.model, ctx.templates);
    let trace = new_trace(variant, query, ctx);
    let started = Instant::now();

    let prompt = match session.render(template, &[("q", query.question_text.as_str())]) {
        Ok(p) => p,
        Err(e) => {
            return Err(make_abort(
                trace,
                &session,
                started,
                None,
                StepError::Review(e.into()),
            ))
        }
    };
    match session.call_user(prompt) {
        Ok(exchange) => Ok(finish(
            trace,
            &session,
            started,
            exchange.response_text.trim().to_string(),
        )),
        Err(e) => Err(make_abort(
            trace,
            &session,
            started,
            None,
            StepError::Review(e.into()),
        )),
    }
}

fn retrieve_then_read(
    variant: PipelineVariant,
    template: &str,
    context_slot: &str,
    query: &OriginalQuery,
    ctx: &PipelineContext<'_>,
) -> Result<PipelineTrace, TraceAbort> {
    let session = ModelSession::new(ctx.backend, ctx.model, ctx.templates);
    let mut trace = new_trace(variant, query, ctx);
    let started = Instant::now();

    let Some(retriever) = ctx.retriever else {
        return Err(make_abort(
            trace,
            &session,
            started,
            None,
            StepError::NoRetriever(1),
        ));
    };
    let documents = match retrieve(retriever, &query.question_text, true, &ctx.config.retriever) {
        Ok(docs) => {
            session.log_retrieval(&query.question_text, &docs);
            docs
        }
        Err(e) => {
            return Err(make_abort(
                trace,
                &session,
                started,
                Some(1),
                StepError::Retrieval(e),
            ))
        }
    };

    let context = snippet(&documents, CONTEXT_BUDGET_CHARS);
    let prompt = match session.render(
        template,
        &[
            ("q", query.question_text.as_str()),
            (context_slot, context.as_str()),
        ],
    ) {
        Ok(p) => p,
        Err(e) => {
            return Err(make_abort(
                trace,
                &session,
                started,
                Some(1),
                StepError::Review(e.into()),
            ))
        }
    };
    let exchange = match session.call_user(prompt) {
        Ok(x) => x,
        Err(e) => {
            return Err(make_abort(
                trace,
                &session,
                started,
                Some(1),
                StepError::Review(e.into()),
            ))
        }
    };

    let mut answer = exchange.response_text.trim().to_string();
    if variant == PipelineVariant::ChainOfNote {
        // The note-taking preamble ends at the [Final Content] marker.
        if let Some(pos) = answer.find("[Final Content]") {
            answer = answer[pos + "[Final Content]".len()..]
                .trim_start_matches([':', ' '])
                .trim()
                .to_string();
        }
    }

    trace.steps.push(SubQueryStep {
        index: 1,
        rewritten_query: query.question_text.clone(),
        anticipated_answer: String::new(),
        needs_retrieval: true,
        documents,
        refined_answer: non_empty(answer.clone()),
        final_marker: true,
        duration_ms: started.elapsed().as_millis() as u64,
    });
    Ok(finish(trace, &session, started, answer))
}

fn marker_value(text: &str, marker: &str) -> Option<String> {
    let pos = text.find(marker)?;
    Some(
        text[pos + marker.len()..]
            .trim_start_matches([':', ' '])
            .trim()
            .to_string(),
    )
}

fn line_value(text: &str, prefix: &str) -> Option<String> {
    text.lines()
        .find_map(|l| l.trim().strip_prefix(prefix))
        .map(|rest| rest.trim_start_matches([':', ' ']).trim().to_string())
}

fn self_ask_loop(
    variant: PipelineVariant,
    query: &OriginalQuery,
    ctx: &PipelineContext<'_>,
    with_retrieval: bool,
) -> Result<PipelineTrace, TraceAbort> {
    use crate::backend::ChatMessage;

    let session = ModelSession::new(ctx.backend, ctx.model, ctx.templates);
    let mut trace = new_trace(variant, query, ctx);
    let started = Instant::now();

    if with_retrieval && ctx.retriever.is_none() {
        return Err(make_abort(
            trace,
            &session,
            started,
            None,
            StepError::NoRetriever(1),
        ));
    }

    let opening = match session.render("self_ask", &[("q", query.question_text.as_str())]) {
        Ok(p) => p,
        Err(e) => {
            return Err(make_abort(
                trace,
                &session,
                started,
                None,
                StepError::Review(e.into()),
            ))
        }
    };
    let mut messages = vec![ChatMessage::user(opening)];
    let mut reprompted = false;

    for iteration in 1..=LOOP_CAP {
        let exchange = match session.call(messages.clone()) {
            Ok(x) => x,
            Err(e) => {
                return Err(make_abort(
                    trace,
                    &session,
                    started,
                    Some(iteration),
                    StepError::Review(e.into()),
                ))
            }
        };
        let reply = exchange.response_text;

        if let Some(answer) = marker_value(&reply, "So the final answer is") {
            return Ok(finish(trace, &session, started, answer));
        }

        let Some(follow_up) = line_value(&reply, "Follow up:") else {
            if !reprompted {
                reprompted = true;
                messages.push(ChatMessage::assistant(reply));
                messages.push(ChatMessage::user(
                    "Your previous reply did not follow the required format. Continue with either a \
                     \"Follow up:\" line or the \"So the final answer is:\" line.",
                ));
                continue;
            }
            return Err(make_abort(
                trace,
                &session,
                started,
                Some(iteration),
                StepError::Review(crate::review::ReviewError::ModelOutputUnparseable {
                    what: "self-ask step",
                    raw: reply.chars().take(120).collect(),
                }),
            ));
        };

        let step_started = Instant::now();
        let (documents, intermediate) = if with_retrieval {
            let retriever = ctx.retriever.expect("checked above");
            let docs = match retrieve(retriever, &follow_up, true, &ctx.config.retriever) {
                Ok(d) => {
                    session.log_retrieval(&follow_up, &d);
                    d
                }
                Err(e) => {
                    return Err(make_abort(
                        trace,
                        &session,
                        started,
                        Some(iteration),
                        StepError::Retrieval(e),
                    ))
                }
            };
            let context = snippet(&docs, CONTEXT_BUDGET_CHARS);
            let prompt = session
                .render(
                    "vanilla_context",
                    &[("q", follow_up.as_str()), ("context", context.as_str())],
                )
                .map_err(crate::review::ReviewError::from);
            let answer = match prompt.and_then(|p| session.call_user(p).map_err(Into::into)) {
                Ok(x) => x.response_text.trim().to_string(),
                Err(e) => {
                    return Err(make_abort(
                        trace,
                        &session,
                        started,
                        Some(iteration),
                        StepError::Review(e),
                    ))
                }
            };
            (docs, answer)
        } else {
            let prompt = session
                .render("vanilla", &[("q", follow_up.as_str())])
                .map_err(crate::review::ReviewError::from);
            let answer = match prompt.and_then(|p| session.call_user(p).map_err(Into::into)) {
                Ok(x) => x.response_text.trim().to_string(),
                Err(e) => {
                    return Err(make_abort(
                        trace,
                        &session,
                        started,
                        Some(iteration),
                        StepError::Review(e),
                    ))
                }
            };
            (Vec::new(), answer)
        };

        trace.steps.push(SubQueryStep {
            index: trace.steps.len() + 1,
            rewritten_query: follow_up.clone(),
            anticipated_answer: String::new(),
            needs_retrieval: with_retrieval,
            documents,
            refined_answer: non_empty(intermediate.clone()),
            final_marker: false,
            duration_ms: step_started.elapsed().as_millis() as u64,
        });

        messages.push(ChatMessage::assistant(reply));
        messages.push(ChatMessage::user(format!(
            "Intermediate answer: {intermediate}"
        )));
    }

    Err(make_abort(
        trace,
        &session,
        started,
        Some(LOOP_CAP),
        StepError::Review(crate::review::ReviewError::ModelOutputUnparseable {
            what: "self-ask final answer (loop cap reached)",
            raw: String::new(),
        }),
    ))
}

fn react_loop(
    variant: PipelineVariant,
    query: &OriginalQuery,
    ctx: &PipelineContext<'_>,
) -> Result<PipelineTrace, TraceAbort> {
    use crate::backend::ChatMessage;

    let session = ModelSession::new(ctx.backend, ctx.model, ctx.templates);
    let mut trace = new_trace(variant, query, ctx);
    let started = Instant::now();

    let Some(retriever) = ctx.retriever else {
        return Err(make_abort(
            trace,
            &session,
            started,
            None,
            StepError::NoRetriever(1),
        ));
    };

    let opening = match session.render("react", &[("q", query.question_text.as_str())]) {
        Ok(p) => p,
        Err(e) => {
            return Err(make_abort(
                trace,
                &session,
                started,
                None,
                StepError::Review(e.into()),
            ))
        }
    };
    let mut messages = vec![ChatMessage::user(opening)];
    let mut reprompted = false;

    for iteration in 1..=LOOP_CAP {
        let exchange = match session.call(messages.clone()) {
            Ok(x) => x,
            Err(e) => {
                return Err(make_abort(
                    trace,
                    &session,
                    started,
                    Some(iteration),
                    StepError::Review(e.into()),
                ))
            }
        };
        let reply = exchange.response_text;

        if let Some(answer) = marker_value(&reply, "Final Answer") {
            return Ok(finish(trace, &session, started, answer));
        }

        let action = line_value(&reply, "Action:").map(|a| a.to_lowercase());
        let action_input = line_value(&reply, "Action Input:");
        let (action, input) = match (action, action_input) {
            (Some(a), Some(i)) if a.contains("search") || a.contains("skip") => (a, i),
            _ => {
                if !reprompted {
                    reprompted = true;
                    messages.push(ChatMessage::assistant(reply));
                    messages.push(ChatMessage::user(
                        "Your previous reply did not follow the required format. Continue with \
                         \"Action:\" (one of [Search, Skip]) and \"Action Input:\" lines, or the \
                         \"Final Answer:\" line.",
                    ));
                    continue;
                }
                return Err(make_abort(
                    trace,
                    &session,
                    started,
                    Some(iteration),
                    StepError::Review(crate::review::ReviewError::ModelOutputUnparseable {
                        what: "react step",
                        raw: reply.chars().take(120).collect(),
                    }),
                ));
            }
        };

        let step_started = Instant::now();
        let is_search = action.contains("search");
        let (documents, observation) = if is_search {
            let docs = match retrieve(retriever, &input, true, &ctx.config.retriever) {
                Ok(d) => {
                    session.log_retrieval(&input, &d);
                    d
                }
                Err(e) => {
                    return Err(make_abort(
                        trace,
                        &session,
                        started,
                        Some(iteration),
                        StepError::Retrieval(e),
                    ))
                }
            };
            let observation = if docs.is_empty() {
                "No results found.".to_string()
            } else {
                snippet(&docs, CONTEXT_BUDGET_CHARS)
            };
            (docs, observation)
        } else {
            // Skip: answer the input from internal knowledge.
            let prompt = session
                .render("vanilla", &[("q", input.as_str())])
                .map_err(crate::review::ReviewError::from);
            let answer = match prompt.and_then(|p| session.call_user(p).map_err(Into::into)) {
                Ok(x) => x.response_text.trim().to_string(),
                Err(e) => {
                    return Err(make_abort(
                        trace,
                        &session,
                        started,
                        Some(iteration),
                        StepError::Review(e),
                    ))
                }
            };
            (Vec::new(), answer)
        };

        trace.steps.push(SubQueryStep {
            index: trace.steps.len() + 1,
            rewritten_query: input,
            anticipated_answer: String::new(),
            needs_retrieval: is_search,
            documents,
            refined_answer: non_empty(observation.clone()),
            final_marker: false,
            duration_ms: step_started.elapsed().as_millis() as u64,
        });

        messages.push(ChatMessage::assistant(reply));
        messages.push(ChatMessage::user(format!("Observation: {observation}")));
    }

    Err(make_abort(
        trace,
        &session,
        started,
        Some(LOOP_CAP),
        StepError::Review(crate::review::ReviewError::ModelOutputUnparseable {
            what: "react final answer (loop cap reached)",
            raw: String::new(),
        }),
    ))
}

/// Parse `[Query N]:`/`[Answer N]:` pairs from a SearChain reply.
fn parse_searchain_pairs(text: &str) -> Vec<(String, String)> {
    let mut queries = Vec::new();
    let mut answers = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if let Some(rest) = line.strip_prefix("[Query") {
            if let Some(pos) = rest.find(']') {
                queries.push(
                    rest[pos + 1..]
                        .trim_start_matches([':', ' '])
                        .trim()
                        .to_string(),
                );
            }
        } else if let Some(rest) = line.strip_prefix("[Answer") {
            if let Some(pos) = rest.find(']') {
                answers.push(
                    rest[pos + 1..]
                        .trim_start_matches([':', ' '])
                        .trim()
                        .to_string(),
                );
            }
        }
    }
    queries
        .into_iter()
        .enumerate()
        .map(|(i, q)| (q, answers.get(i).cloned().unwrap_or_default()))
        .collect()
}

fn searchain_run(
    variant: PipelineVariant,
    query: &OriginalQuery,
    ctx: &PipelineContext<'_>,
    with_retrieval: bool,
) -> Result<PipelineTrace, TraceAbort> {
    use crate::backend::ChatMessage;

    let session = ModelSession::new(ctx.backend, ctx.model, ctx.templates);
    let mut trace = new_trace(variant, query, ctx);
    let started = Instant::now();

    if with_retrieval && ctx.retriever.is_none() {
        return Err(make_abort(
            trace,
            &session,
            started,
            None,
            StepError::NoRetriever(1),
        ));
    }

    let prompt = match session.render("searchain", &[("q", query.question_text.as_str())]) {
        Ok(p) => p,
        Err(e) => {
            return Err(make_abort(
                trace,
                &session,
                started,
                None,
                StepError::Review(e.into()),
            ))
        }
    };
    let mut exchange = match session.call_user(prompt.clone()) {
        Ok(x) => x,
        Err(e) => {
            return Err(make_abort(
                trace,
                &session,
                started,
                None,
                StepError::Review(e.into()),
            ))
        }
    };

    if !exchange.response_text.contains("[Final Content]") {
        // One reprompt, then the trace aborts with the reason.
        let retry = session.call(vec![
            ChatMessage::user(prompt),
            ChatMessage::assistant(exchange.response_text.clone()),
            ChatMessage::user(
                "Your previous reply did not follow the required format. Construct the reasoning \
                 chain with [Query N]/[Answer N] pairs and finish with a [Final Content] line.",
            ),
        ]);
        exchange = match retry {
            Ok(x) => x,
            Err(e) => {
                return Err(make_abort(
                    trace,
                    &session,
                    started,
                    None,
                    StepError::Review(e.into()),
                ))
            }
        };
        if !exchange.response_text.contains("[Final Content]") {
            return Err(make_abort(
                trace,
                &session,
                started,
                None,
                StepError::Review(crate::review::ReviewError::ModelOutputUnparseable {
                    what: "searchain chain",
                    raw: exchange.response_text.chars().take(120).collect(),
                }),
            ));
        }
    }

    let reply = exchange.response_text;
    let final_answer = marker_value(&reply, "[Final Content]").unwrap_or_default();
    if final_answer.is_empty() {
        return Err(make_abort(
            trace,
            &session,
            started,
            None,
            StepError::Review(crate::review::ReviewError::ModelOutputUnparseable {
                what: "searchain final content",
                raw: reply.chars().take(120).collect(),
            }),
        ));
    }

    for (i, (sub_query, answer)) in parse_searchain_pairs(&reply).into_iter().enumerate() {
        let step_started = Instant::now();
        let documents = if with_retrieval {
            let retriever = ctx.retriever.expect("checked above");
            match retrieve(retriever, &sub_query, true, &ctx.config.retriever) {
                Ok(d) => {
                    session.log_retrieval(&sub_query, &d);
                    d
                }
                Err(e) => {
                    return Err(make_abort(
                        trace,
                        &session,
                        started,
                        Some(i + 1),
                        StepError::Retrieval(e),
                    ))
                }
            }
        } else {
            Vec::new()
        };
        trace.steps.push(SubQueryStep {
            index: i + 1,
            rewritten_query: sub_query,
            anticipated_answer: answer.clone(),
            needs_retrieval: with_retrieval,
            documents,
            refined_answer: non_empty(answer),
            final_marker: false,
            duration_ms: step_started.elapsed().as_millis() as u64,
        });
    }

    Ok(finish(trace, &session, started, final_answer))
}
