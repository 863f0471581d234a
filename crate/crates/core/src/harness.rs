//! Bounded-concurrency runner over question batches.
//!
//! One pipeline run is strictly sequential; parallelism happens across
//! independent questions through a fixed-size worker pool, so at no time
//! are more than `concurrency` questions in flight. Per-question failures
//! are captured in the outcome (with the partial trace preserved), never
//! aborting the batch.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use chrono::NaiveDate;

use crate::baselines::{run_variant, PipelineVariant, VariantError};
use crate::evaluation::{evaluate, sample, EvalError, EvalRecord, EvalReport};
use crate::pipeline::{OriginalQuery, PipelineTrace};
use crate::review::PipelineContext;

/// Result of one question.
#[derive(Debug, Clone)]
pub struct QuestionOutcome {
    pub record_id: String,
    /// The trace; partial (with `aborted` set) when the run failed.
    pub trace: PipelineTrace,
    /// Failure summary when the run aborted.
    pub error: Option<String>,
}

/// Build the pipeline query for a record, applying the batch-level
/// default anchor when the record carries none.
pub fn query_for_record(record: &EvalRecord, default_anchor: Option<NaiveDate>) -> OriginalQuery {
    let mut query = OriginalQuery::new(record.record_id.clone(), record.question.clone())
        .expect("dataset loading rejects empty questions");
    if let Some(anchor) = record.temporal_anchor.or(default_anchor) {
        query = query.with_anchor(anchor);
    }
    query
}

/// Run one variant over all records with at most `concurrency` questions
/// in flight. Outcomes come back in record order.
pub fn run_batch(
    records: &[EvalRecord],
    variant: PipelineVariant,
    ctx: &PipelineContext<'_>,
    concurrency: usize,
    default_anchor: Option<NaiveDate>,
) -> Vec<QuestionOutcome> {
    let workers = concurrency.clamp(1, records.len().max(1));
    let cursor = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<QuestionOutcome>>> = Mutex::new(vec![None; records.len()]);

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = cursor.fetch_add(1, Ordering::SeqCst);
                if i >= records.len() {
                    break;
                }
                let record = &records[i];
                let query = query_for_record(record, default_anchor);
                let outcome = match run_variant(variant, &query, ctx) {
                    Ok(trace) => QuestionOutcome {
                        record_id: record.record_id.clone(),
                        trace,
                        error: None,
                    },
                    Err(abort) => QuestionOutcome {
                        record_id: record.record_id.clone(),
                        error: Some(abort.to_string()),
                        trace: *abort.partial,
                    },
                };
                slots.lock().unwrap()[i] = Some(outcome);
            });
        }
    });

    slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|o| o.expect("every slot filled"))
        .collect()
}

/// Run several variants over the same sampled records (same seed) and
/// score each, producing one report per variant.
pub fn ablation_matrix(
    records: &[EvalRecord],
    variants: &[PipelineVariant],
    ctx: &PipelineContext<'_>,
    sample_size: usize,
    seed: u64,
    concurrency: usize,
    default_anchor: Option<NaiveDate>,
) -> Result<Vec<(PipelineVariant, EvalReport)>, MatrixError> {
    if variants.is_empty() {
        return Err(MatrixError::Variant(VariantError::EmptyVariantList));
    }
    if records.is_empty() {
        return Err(MatrixError::Eval(EvalError::EmptyInput(
            "no records".into(),
        )));
    }

    let subset = sample(records, sample_size, seed);
    let mut reports = Vec::with_capacity(variants.len());
    for &variant in variants {
        let outcomes = run_batch(&subset, variant, ctx, concurrency, default_anchor);
        let traces: Vec<PipelineTrace> = outcomes.iter().map(|o| o.trace.clone()).collect();
        let mut report = evaluate(&traces, &subset).map_err(MatrixError::Eval)?;
        report.variant = variant.name().to_string();
        report.seed = Some(seed);
        reports.push((variant, report));
    }
    Ok(reports)
}

#[derive(Debug, thiserror::Error)]
pub enum MatrixError {
    #[error(transparent)]
    Variant(#[from] VariantError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}
