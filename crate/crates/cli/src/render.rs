//! Terminal rendering of traces in the per-step review/refine layout.

use rrr_core::pipeline::PipelineTrace;

/// Render a trace as the step-by-step layout: query rewriting and answer
/// per review, retrieve/context lines only when the step retrieved, the
/// refined answer per step, then the aggregated answer.
pub fn render_trace(trace: &PipelineTrace) -> String {
    let mut out = String::new();
    out.push_str(&format!("Question: {}\n", trace.query.question_text));
    if let Some(anchor) = trace.query.anchor_text() {
        out.push_str(&format!("Temporal anchor: {anchor}\n"));
    }
    out.push_str(&format!("Variant: {}\n\n", trace.variant));

    for step in &trace.steps {
        out.push_str(&format!("Step {}:\n", step.index));
        out.push_str("  Review\n");
        out.push_str(&format!("    Query Rewriting: {}\n", step.rewritten_query));
        if step.needs_retrieval {
            out.push_str("    Answer: [need_retrieval]\n");
        } else if !step.anticipated_answer.is_empty() {
            out.push_str(&format!("    Answer: {}\n", step.anticipated_answer));
        }
        out.push_str("  Refine\n");
        if step.needs_retrieval {
            out.push_str(&format!("    Retrieve: [{}]\n", step.rewritten_query));
            for doc in &step.documents {
                let title = if doc.title.is_empty() {
                    &doc.doc_id
                } else {
                    &doc.title
                };
                out.push_str(&format!(
                    "    Context: {} (score {:.3}, {})\n",
                    title,
                    doc.score,
                    doc.source.label()
                ));
            }
        }
        out.push_str(&format!("    Refined Answer: {}\n\n", step.refined_answer));
    }

    if !trace.steps.is_empty() {
        out.push_str("Question Answering:\n");
        for step in &trace.steps {
            out.push_str(&format!(
                "  Sub-Answer {}: {}\n",
                step.index, step.refined_answer
            ));
        }
    }
    match &trace.aborted {
        Some(reason) => out.push_str(&format!("Aborted: {reason}\n")),
        None => out.push_str(&format!("Aggregated Answer: {}\n", trace.final_answer)),
    }
    out
}
