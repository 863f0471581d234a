//! Subcommand implementations.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use chrono::Utc;
use serde::Serialize;

use rrr_core::backend::{
    CachedBackend, CallCounters, ChatBackend, DiskCache, HttpBackend, InstrumentedBackend, Script,
    ScriptedBackend,
};
use rrr_core::baselines::PipelineVariant;
use rrr_core::evaluation::{
    evaluate, load_dataset, rescore_with_judge, sample, DatasetKind, EvalReport,
};
use rrr_core::harness::{run_batch, QuestionOutcome};
use rrr_core::pipeline::{OriginalQuery, PipelineTrace};
use rrr_core::prompts::TemplateSet;
use rrr_core::retrieval::{
    build_index, load_corpus_jsonl, CorpusIndex, FixtureWebAdapter, Retriever,
};
use rrr_core::review::{
    config_digest, PipelineContext, PipelineOptions, RunConfig as CoreRunConfig,
};

use crate::config::{Overrides, RunConfig};
use crate::render::render_trace;

/// Assembled run components.
pub struct Runtime {
    pub config: RunConfig,
    pub backend: Box<dyn ChatBackend>,
    pub counters: Arc<CallCounters>,
    pub retriever: Option<Box<dyn Retriever>>,
    pub templates: TemplateSet,
}

impl Runtime {
    pub fn from_config(config: RunConfig) -> Result<Self> {
        config.validate()?;

        let base: Box<dyn ChatBackend> = match &config.scripted {
            Some(path) => {
                let script =
                    Script::from_json_file(path).map_err(|e| anyhow!("scripted backend: {e}"))?;
                Box::new(ScriptedBackend::from_script(script).map_err(|e| anyhow!("{e}"))?)
            }
            None => Box::new(HttpBackend::new()),
        };
        let instrumented = InstrumentedBackend::new(base);
        let counters = instrumented.counters();
        let backend: Box<dyn ChatBackend> = match &config.cache_dir {
            Some(dir) => Box::new(CachedBackend::new(
                instrumented,
                DiskCache::open(dir).map_err(|e| anyhow!("{e}"))?,
            )),
            None => Box::new(instrumented),
        };

        let retriever: Option<Box<dyn Retriever>> =
            match (&config.corpus_index, &config.web_fixtures) {
                (Some(path), _) => Some(Box::new(
                    CorpusIndex::load(path).map_err(|e| anyhow!("loading index: {e}"))?,
                )),
                (None, Some(dir)) => Some(Box::new(
                    FixtureWebAdapter::open(dir).map_err(|e| anyhow!("web fixtures: {e}"))?,
                )),
                (None, None) => None,
            };

        let templates = match &config.prompts_dir {
            Some(dir) => TemplateSet::from_dir(dir).map_err(|e| anyhow!("{e}"))?,
            None => TemplateSet::embedded(),
        };

        Ok(Self {
            config,
            backend,
            counters,
            retriever,
            templates,
        })
    }

    fn core_config(&self) -> CoreRunConfig {
        CoreRunConfig {
            step_budget: self.config.step_budget,
            retriever: self.config.effective_retriever(),
            options: PipelineOptions::default(),
        }
    }

    fn context<'a>(&'a self, core: &'a CoreRunConfig, variant: &'a str) -> PipelineContext<'a> {
        PipelineContext {
            backend: &self.backend,
            retriever: self.retriever.as_deref(),
            model: &self.config.model,
            templates: &self.templates,
            config: core,
            variant,
        }
    }

    fn variant(&self) -> Result<PipelineVariant> {
        PipelineVariant::from_name(&self.config.variant).map_err(|e| anyhow!("{e}"))
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    code_version: &'a str,
    started_at: String,
    variant: &'a str,
    seed: u64,
    sample_size: usize,
    concurrency: usize,
    /// Digest over model config and prompt set; also stamped on traces.
    model_config_digest: String,
    prompt_set_hash: String,
    /// Digest over the full resolved run configuration.
    run_config_digest: String,
    dataset_path: Option<&'a Path>,
    dataset_kind: &'a str,
    /// Retrieval depth in effect (explicit or dataset default).
    top_k: usize,
}

fn write_manifest(runtime: &Runtime, dir: &Path) -> Result<()> {
    let config_json = serde_json::to_string(&runtime.config)?;
    let run_config_digest = rrr_core::pipeline::content_digest(&config_json);

    let manifest = Manifest {
        code_version: env!("CARGO_PKG_VERSION"),
        started_at: Utc::now().to_rfc3339(),
        variant: &runtime.config.variant,
        seed: runtime.config.seed,
        sample_size: runtime.config.sample_size,
        concurrency: runtime.config.concurrency,
        model_config_digest: config_digest(&runtime.config.model, &runtime.templates),
        prompt_set_hash: runtime.templates.set_hash(),
        run_config_digest,
        dataset_path: runtime.config.dataset_path.as_deref(),
        dataset_kind: &runtime.config.dataset_kind,
        top_k: runtime.config.effective_retriever().top_k,
    };
    std::fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

fn write_trace(trace: &PipelineTrace, dir: &Path) -> Result<PathBuf> {
    let path = dir.join(format!("trace-{}.json", sanitize(&trace.query.question_id)));
    std::fs::write(&path, trace.to_json_pretty()?)?;
    Ok(path)
}

fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// `rrr index`: build and persist a corpus index.
pub fn cmd_index(corpus: &Path, output: &Path) -> Result<i32> {
    let documents = load_corpus_jsonl(corpus).map_err(|e| anyhow!("{e}"))?;
    let index = build_index(&documents).map_err(|e| anyhow!("{e}"))?;
    index.save(output).map_err(|e| anyhow!("{e}"))?;
    println!(
        "indexed {} documents (avg length {:.2} tokens) -> {}",
        index.doc_count,
        index.avg_doc_length,
        output.display()
    );
    Ok(0)
}

/// `rrr ask`: run one question, print the final answer, write the trace.
pub fn cmd_ask(question: &str, question_id: Option<String>, overrides: &Overrides) -> Result<i32> {
    let runtime = Runtime::from_config(overrides.resolve()?)?;
    let variant = runtime.variant()?;
    let id =
        question_id.unwrap_or_else(|| format!("ask-{}", Utc::now().format("%Y%m%dT%H%M%S%.3f")));

    let mut query = OriginalQuery::new(id, question).map_err(|e| anyhow!("{e}"))?;
    if let Some(anchor) = runtime.config.as_of {
        query = query.with_anchor(anchor);
    }

    write_manifest(&runtime, &runtime.config.output_dir)?;
    let core = runtime.core_config();
    let ctx = runtime.context(&core, variant.name());

    match rrr_core::baselines::run_variant(variant, &query, &ctx) {
        Ok(trace) => {
            let path = write_trace(&trace, &runtime.config.output_dir)?;
            println!("{}", trace.final_answer);
            eprintln!("trace written to {}", path.display());
            Ok(0)
        }
        Err(abort) => {
            let path = write_trace(&abort.partial, &runtime.config.output_dir)?;
            eprintln!("error: {abort}");
            eprintln!("partial trace written to {}", path.display());
            Ok(1)
        }
    }
}

fn load_records(runtime: &Runtime) -> Result<Vec<rrr_core::evaluation::EvalRecord>> {
    let path = runtime
        .config
        .dataset_path
        .as_ref()
        .ok_or_else(|| anyhow!("no dataset configured (set dataset_path or --dataset)"))?;
    let kind = DatasetKind::from_name(&runtime.config.dataset_kind)
        .ok_or_else(|| anyhow!("unknown dataset kind {:?}", runtime.config.dataset_kind))?;
    load_dataset(path, kind).map_err(|e| anyhow!("{e}"))
}

fn run_and_score(
    runtime: &Runtime,
    variant: PipelineVariant,
    records: &[rrr_core::evaluation::EvalRecord],
) -> Result<(Vec<QuestionOutcome>, EvalReport)> {
    let core = runtime.core_config();
    let ctx = runtime.context(&core, variant.name());
    let outcomes = run_batch(
        records,
        variant,
        &ctx,
        runtime.config.concurrency,
        runtime.config.as_of,
    );
    let traces: Vec<PipelineTrace> = outcomes.iter().map(|o| o.trace.clone()).collect();
    let mut report = evaluate(&traces, records).map_err(|e| anyhow!("{e}"))?;
    report.variant = variant.name().to_string();
    report.seed = Some(runtime.config.seed);
    if runtime.config.llm_judge {
        let session = rrr_core::session::ModelSession::new(
            &runtime.backend,
            &runtime.config.model,
            &runtime.templates,
        );
        rescore_with_judge(&mut report, records, &session).map_err(|e| anyhow!("{e}"))?;
    }
    Ok((outcomes, report))
}

fn write_report(report: &EvalReport, dir: &Path, stem: &str) -> Result<()> {
    std::fs::write(dir.join(format!("{stem}.json")), report.to_json_pretty()?)?;
    std::fs::write(dir.join(format!("{stem}.csv")), report.to_csv())?;
    std::fs::write(dir.join(format!("{stem}.txt")), report.to_text_table())?;
    Ok(())
}

/// `rrr eval`: run the configured variant over the sampled dataset and
/// write traces plus the scored report.
pub fn cmd_eval(overrides: &Overrides) -> Result<i32> {
    let runtime = Runtime::from_config(overrides.resolve()?)?;
    let variant = runtime.variant()?;
    let records = load_records(&runtime)?;
    let subset = sample(&records, runtime.config.sample_size, runtime.config.seed);

    let trace_dir = runtime.config.output_dir.join("traces");
    std::fs::create_dir_all(&trace_dir)?;
    write_manifest(&runtime, &runtime.config.output_dir)?;

    let (outcomes, report) = run_and_score(&runtime, variant, &subset)?;
    for outcome in &outcomes {
        write_trace(&outcome.trace, &trace_dir)?;
        if let Some(error) = &outcome.error {
            eprintln!("question {} failed: {error}", outcome.record_id);
        }
    }
    write_report(&report, &runtime.config.output_dir, "report")?;

    print!("{}", report.to_text_table());
    println!("backend calls: {}", runtime.counters.total());
    Ok(0)
}

/// `rrr ablate`: run several variants over the same sampled records and
/// write one report per variant plus a comparison table.
pub fn cmd_ablate(variants: &[String], overrides: &Overrides) -> Result<i32> {
    if variants.is_empty() {
        bail!("no variants given (use --variants a,b,c)");
    }
    let parsed: Vec<PipelineVariant> = variants
        .iter()
        .map(|name| PipelineVariant::from_name(name).map_err(|e| anyhow!("{e}")))
        .collect::<Result<_>>()?;

    let runtime = Runtime::from_config(overrides.resolve()?)?;
    let records = load_records(&runtime)?;
    let subset = sample(&records, runtime.config.sample_size, runtime.config.seed);

    write_manifest(&runtime, &runtime.config.output_dir)?;

    let mut rows = Vec::new();
    for &variant in &parsed {
        let trace_dir = runtime
            .config
            .output_dir
            .join("traces")
            .join(variant.name());
        std::fs::create_dir_all(&trace_dir)?;
        let (outcomes, report) = run_and_score(&runtime, variant, &subset)?;
        for outcome in &outcomes {
            write_trace(&outcome.trace, &trace_dir)?;
        }
        write_report(
            &report,
            &runtime.config.output_dir,
            &format!("report-{}", variant.name()),
        )?;
        rows.push(report);
    }

    println!(
        "{:<24} {:>8} {:>8} {:>12} {:>11} {:>11}",
        "variant", "acc", "f1", "single-hop", "multi-hop", "retrievals"
    );
    for report in &rows {
        let single = report
            .single_hop
            .map(|s| format!("{:.4}", s.accuracy))
            .unwrap_or_else(|| "-".into());
        let multi = report
            .multi_hop
            .map(|s| format!("{:.4}", s.accuracy))
            .unwrap_or_else(|| "-".into());
        println!(
            "{:<24} {:>8.4} {:>8.4} {:>12} {:>11} {:>11}",
            report.variant,
            report.overall_accuracy,
            report.mean_f1,
            single,
            multi,
            report.retriever_calls
        );
    }
    Ok(0)
}

/// `rrr trace`: render a trace file in the step layout.
pub fn cmd_trace(path: &Path) -> Result<i32> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read trace {}", path.display()))?;
    let trace = PipelineTrace::from_json(&text)
        .with_context(|| format!("trace {} does not parse", path.display()))?;
    print!("{}", render_trace(&trace));
    Ok(0)
}
