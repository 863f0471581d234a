//! Review-then-refine multi-hop question answering pipeline.
//!
//! A complex question is iteratively decomposed into temporally-anchored
//! sub-queries. Each sub-query passes through an adaptive retrieval gate:
//! when the model cannot answer from internal knowledge it emits a
//! `[need_retrieval]` marker, external documents are fetched, and the
//! per-step answer is refined against that context. Once the reasoning
//! path terminates, the intermediate answers are aggregated into one
//! final answer.
//!
//! The crate is organized along the pipeline:
//!
//! - [`pipeline`] — domain types and the reasoning-state transition machine
//! - [`backend`] — chat-completion backends (HTTP, scripted) with a disk cache
//! - [`prompts`] — versioned template set with named placeholders
//! - [`retrieval`] — BM25 corpus index, web fixtures, and the gated retrieve
//! - [`review`] — sub-query planning, dynamic rewriting, and the step loop
//! - [`refine`] — per-step answer refinement and final aggregation
//! - [`baselines`] — comparison pipelines and ablation variants
//! - [`evaluation`] — dataset loading, sampling, and accuracy/F1 metrics
//! - [`harness`] — bounded-concurrency runner over question batches

pub mod backend;
pub mod baselines;
pub mod evaluation;
pub mod harness;
pub mod pipeline;
pub mod prompts;
pub mod refine;
pub mod retrieval;
pub mod review;
pub mod session;

pub use backend::{BackendError, ChatBackend, ChatExchange, ChatMessage, ModelConfig, Role};
pub use pipeline::{OriginalQuery, PipelineTrace, ReasoningState, StateError, SubQueryStep};
pub use retrieval::{CorpusIndex, Document, DocumentSource, RetrieverConfig};
pub use review::{PipelineOptions, RunConfig, TraceAbort};
