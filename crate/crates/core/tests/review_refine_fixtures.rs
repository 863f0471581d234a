//! End-to-end pipeline runs over scripted fixtures mirroring the case
//! studies: per-step review/refine, gated retrieval, ablation structure,
//! and replay determinism.

use chrono::NaiveDate;

use rrr_core::backend::{ModelConfig, ScriptRule, ScriptedBackend};
use rrr_core::baselines::{run_variant, PipelineVariant};
use rrr_core::pipeline::OriginalQuery;
use rrr_core::prompts::TemplateSet;
use rrr_core::retrieval::{
    build_index, CorpusDocument, CorpusIndex, CountingRetriever, RetrieverConfig,
};
use rrr_core::review::{run_review_refine, PipelineContext, RunConfig};

const TIKTOK_FINAL: &str =
    "As of June 2024, the most-followed user on TikTok is Khaby Lame, he is 24 years old.";

fn tiktok_corpus() -> CorpusIndex {
    build_index(&[CorpusDocument {
        id: "tiktok-top10".into(),
        title: "Top 10 most-followed TikTok influencers in 2024".into(),
        text: "From the comedic genius of Khaby Lame to actor Will Smith, here are the top 10 \
               most-followed TikTok accounts, representing TikTok stardom and their incredible \
               influence on the platform, as of June 2024. Rank 1 Khaby Lame @khaby.lame 161.8M. \
               Rank 2 Charli D'Amelio @charlidamelio 151.6M."
            .into(),
    }])
    .unwrap()
}

fn tiktok_rules() -> Vec<ScriptRule> {
    vec![
        ScriptRule {
            match_all: vec!["Sub-questions:".into()],
            response: r#"{ "step 1": "Who is the most-followed user on TikTok?", "step 2": "How old is this person?" }"#.into(),
        },
        ScriptRule {
            match_all: vec!["Refined answer:".into(), "Context:".into()],
            response: "As of June 2024, the most-followed user on TikTok is Khaby Lame.".into(),
        },
        ScriptRule {
            match_all: vec!["Refined answer:".into(), "Anticipated answer:".into()],
            response: "Khaby Lame was born on March 9, 2000. In June 2024, Khaby Lame is 24 years old.".into(),
        },
        ScriptRule {
            match_all: vec!["Next sub-query:".into(), "Khaby Lame".into()],
            response: "Query: How old is Khaby Lame in June 2024?\nAnswer: Khaby Lame was born on March 9, 2000. In June 2024, Khaby Lame is 24 years old.\n[final]".into(),
        },
        ScriptRule {
            match_all: vec!["Next sub-query:".into()],
            response: "Query: Who is the most-followed user on TikTok as of June 2024?\nAnswer: [need_retrieval].".into(),
        },
        ScriptRule {
            match_all: vec!["Sub-answers:".into()],
            response: TIKTOK_FINAL.into(),
        },
    ]
}

fn tiktok_query() -> OriginalQuery {
    OriginalQuery::new("freshqa-t7", "How old is the most-followed user on TikTok?")
        .unwrap()
        .with_anchor(NaiveDate::from_ymd_opt(2024, 6, 1).unwrap())
}

fn freshqa_config() -> RunConfig {
    RunConfig {
        step_budget: 8,
        retriever: RetrieverConfig {
            top_k: 5,
            min_score: 0.0,
        },
        ..RunConfig::default()
    }
}

#[test]
fn tiktok_case_structure_and_gate_accounting() {
    let backend = ScriptedBackend::rules(tiktok_rules());
    let retriever = CountingRetriever::new(tiktok_corpus());
    let model = ModelConfig::default();
    let templates = TemplateSet::embedded();
    let config = freshqa_config();
    let ctx = PipelineContext {
        backend: &backend,
        retriever: Some(&retriever),
        model: &model,
        templates: &templates,
        config: &config,
        variant: "rrr_full",
    };

    let trace = run_review_refine(&tiktok_query(), &ctx).unwrap();

    assert_eq!(trace.steps.len(), 2);
    assert!(trace.steps[0].needs_retrieval);
    assert!(!trace.steps[0].documents.is_empty());
    assert!(!trace.steps[1].needs_retrieval);
    assert!(trace.steps[1].documents.is_empty());
    assert!(trace.final_answer.contains("Khaby Lame"));
    assert!(trace.final_answer.contains("24"));

    // Gate accounting: one retriever invocation, matching the one gated step.
    assert_eq!(retriever.accesses(), 1);
    assert_eq!(trace.retriever_calls(), 1);
    assert_eq!(
        trace.steps.iter().filter(|s| s.needs_retrieval).count(),
        trace.retriever_calls()
    );

    // Temporal anchoring: every rewritten query carries the anchor text.
    for step in &trace.steps {
        assert!(
            step.rewritten_query.contains("June 2024"),
            "step {} lost the anchor: {}",
            step.index,
            step.rewritten_query
        );
    }

    // Model calls: plan, two reviews, two refines, aggregate.
    assert_eq!(trace.model_calls(), 6);
    assert!(trace.aborted.is_none());
    assert!(!trace.model_config_digest.is_empty());
}

#[test]
fn tiktok_case_replays_byte_identically() {
    let model = ModelConfig::default();
    let templates = TemplateSet::embedded();
    let config = freshqa_config();
    let run = || {
        let backend = ScriptedBackend::rules(tiktok_rules());
        let retriever = tiktok_corpus();
        let ctx = PipelineContext {
            backend: &backend,
            retriever: Some(&retriever),
            model: &model,
            templates: &templates,
            config: &config,
            variant: "rrr_full",
        };
        run_review_refine(&tiktok_query(), &ctx).unwrap()
    };
    let first = run();
    let second = run();
    assert_eq!(
        first.canonical_json().unwrap(),
        second.canonical_json().unwrap(),
        "replaying the same scripted fixture must reproduce the canonical trace bytes"
    );
    assert_eq!(
        first.canonical_digest().unwrap(),
        second.canonical_digest().unwrap()
    );
}

fn films_transcript() -> Vec<String> {
    let plan = r#"{ "step 1": "Who is the director of Mister Buddwing?", "step 2": "When was the director of Mister Buddwing born?", "step 3": "Who is the director of Road to Istanbul?", "step 4": "When was the director of Road to Istanbul born?", "step 5": "Which director was born later?" }"#;
    let steps = [
        (
            "Who is the director of Mister Buddwing?",
            "The director of Mister Buddwing is Delbert Mann.",
        ),
        (
            "When was Delbert Mann born?",
            "Delbert Mann was born on January 30, 1920.",
        ),
        (
            "Who is the director of Road to Istanbul?",
            "The director of Road to Istanbul is Rachid Bouchareb.",
        ),
        (
            "When was Rachid Bouchareb born?",
            "Rachid Bouchareb was born on September 1, 1953.",
        ),
        (
            "Which director was born later, Delbert Mann or Rachid Bouchareb?",
            "Rachid Bouchareb was born later than Delbert Mann.",
        ),
    ];
    let mut transcript = vec![plan.to_string()];
    for (i, (query, answer)) in steps.iter().enumerate() {
        let marker = if i == steps.len() - 1 {
            "\n[final]"
        } else {
            ""
        };
        transcript.push(format!("Query: {query}\nAnswer: {answer}{marker}"));
        transcript.push(answer.to_string());
    }
    transcript.push(
        "The director of Road to Istanbul, Rachid Bouchareb, was born later than the director \
         of Mister Buddwing, Delbert Mann. Therefore, the answer is Road to Istanbul."
            .to_string(),
    );
    transcript
}

#[test]
fn films_case_five_internal_steps_zero_retrievals() {
    let backend = ScriptedBackend::transcript(films_transcript());
    let model = ModelConfig::default();
    let templates = TemplateSet::embedded();
    let config = RunConfig::default();
    let ctx = PipelineContext {
        backend: &backend,
        retriever: None,
        model: &model,
        templates: &templates,
        config: &config,
        variant: "rrr_full",
    };
    let query = OriginalQuery::new(
        "2wiki-t9",
        "Which film has the director born later, Mister Buddwing or Road to Istanbul?",
    )
    .unwrap();

    let trace = run_review_refine(&query, &ctx).unwrap();
    assert_eq!(trace.steps.len(), 5);
    assert_eq!(trace.retriever_calls(), 0);
    assert!(trace.steps.iter().all(|s| !s.needs_retrieval));
    assert!(trace.final_answer.contains("Road to Istanbul"));
    // Transcript fully consumed: plan + 5 reviews + 5 refines + aggregate.
    assert_eq!(backend.calls_made(), 12);
}

#[test]
fn budget_clamp_terminates_after_one_step() {
    let backend = ScriptedBackend::rules(tiktok_rules());
    let retriever = tiktok_corpus();
    let model = ModelConfig::default();
    let templates = TemplateSet::embedded();
    let config = RunConfig {
        step_budget: 1,
        retriever: RetrieverConfig {
            top_k: 5,
            min_score: 0.0,
        },
        ..RunConfig::default()
    };
    let ctx = PipelineContext {
        backend: &backend,
        retriever: Some(&retriever),
        model: &model,
        templates: &templates,
        config: &config,
        variant: "rrr_full",
    };
    let trace = run_review_refine(&tiktok_query(), &ctx).unwrap();
    assert_eq!(trace.steps.len(), 1);
    assert!(!trace.final_answer.is_empty());
}

#[test]
fn ablation_structural_contract() {
    let model = ModelConfig::default();
    let templates = TemplateSet::embedded();
    let config = freshqa_config();
    let query = tiktok_query();

    let run = |variant: PipelineVariant| {
        let backend = ScriptedBackend::rules(tiktok_rules());
        let retriever = CountingRetriever::new(tiktok_corpus());
        let ctx = PipelineContext {
            backend: &backend,
            retriever: Some(&retriever),
            model: &model,
            templates: &templates,
            config: &config,
            variant: variant.name(),
        };
        let trace = run_variant(variant, &query, &ctx).unwrap();
        (trace, retriever.accesses())
    };

    let (full, full_accesses) = run(PipelineVariant::RrrFull);
    let (no_rewrite, _) = run(PipelineVariant::RrrNoRewrite);
    let (no_decompose, _) = run(PipelineVariant::RrrNoDecompose);
    let (no_retrieval, no_retrieval_accesses) = run(PipelineVariant::RrrNoRetrieval);

    // Verbatim plan queries, no anchor clause edits.
    assert_eq!(
        no_rewrite.steps[0].rewritten_query,
        "Who is the most-followed user on TikTok?"
    );
    assert_eq!(
        no_rewrite.steps[1].rewritten_query,
        "How old is this person?"
    );
    assert!(no_rewrite
        .steps
        .iter()
        .all(|s| !s.rewritten_query.contains("June 2024")));

    // Decomposition disabled: exactly one step.
    assert_eq!(no_decompose.steps.len(), 1);

    // Retrieval disabled: zero invocations, no documents anywhere.
    assert_eq!(no_retrieval_accesses, 0);
    assert_eq!(no_retrieval.retriever_calls(), 0);
    assert!(no_retrieval
        .steps
        .iter()
        .all(|s| s.documents.is_empty() && !s.needs_retrieval));

    // The full pipeline differs from both ablations.
    assert!(full_accesses > 0);
    assert_ne!(
        full.canonical_json().unwrap(),
        no_rewrite.canonical_json().unwrap()
    );
    assert_ne!(
        full.canonical_json().unwrap(),
        no_decompose.canonical_json().unwrap()
    );
    assert_eq!(full.steps.len(), 2);
    assert!(full.steps[0].rewritten_query.contains("June 2024"));
}

#[test]
fn abort_preserves_partial_trace() {
    // Transcript stops after the first refine, so the second review fails.
    let transcript = vec![
        r#"{ "step 1": "Who is the most-followed user on TikTok?", "step 2": "How old is this person?" }"#.to_string(),
        "Query: Who is the most-followed user on TikTok as of June 2024?\nAnswer: [need_retrieval]".to_string(),
        "As of June 2024, the most-followed user on TikTok is Khaby Lame.".to_string(),
    ];
    let backend = ScriptedBackend::transcript(transcript);
    let retriever = tiktok_corpus();
    let model = ModelConfig::default();
    let templates = TemplateSet::embedded();
    let config = freshqa_config();
    let ctx = PipelineContext {
        backend: &backend,
        retriever: Some(&retriever),
        model: &model,
        templates: &templates,
        config: &config,
        variant: "rrr_full",
    };
    let err = run_review_refine(&tiktok_query(), &ctx).unwrap_err();
    assert_eq!(err.step_index, Some(2));
    assert!(err.partial.aborted.is_some());
    assert_eq!(
        err.partial.steps.len(),
        1,
        "completed steps stay in the partial trace"
    );
    assert!(err.partial.backend_call_log.len() >= 3);
}
