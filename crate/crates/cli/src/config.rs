//! Run configuration: a single JSON file with CLI flag overrides.
//!
//! Secrets never appear in the file; the model section names the
//! environment variable holding the API key.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use rrr_core::backend::ModelConfig;
use rrr_core::retrieval::RetrieverConfig;

/// Everything one run needs. All fields have workable defaults so a bare
/// `rrr ask --scripted ...` works without a config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub model: ModelConfig,
    /// Retrieval settings; when absent, `top_k` follows the dataset kind
    /// (5 for freshqa, 3 otherwise).
    pub retriever: Option<RetrieverConfig>,
    pub step_budget: usize,
    pub variant: String,
    pub dataset_path: Option<PathBuf>,
    /// One of: freshqa, pat_questions, two_wiki, multihop_rag, custom.
    pub dataset_kind: String,
    pub sample_size: usize,
    pub seed: u64,
    pub cache_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub concurrency: usize,
    /// Scripted-backend transcript/rules file; selects the scripted
    /// backend instead of the HTTP endpoint.
    pub scripted: Option<PathBuf>,
    /// Persisted corpus index to retrieve from.
    pub corpus_index: Option<PathBuf>,
    /// Recorded web fixtures directory (used when no corpus index).
    pub web_fixtures: Option<PathBuf>,
    /// Alternate prompt template directory.
    pub prompts_dir: Option<PathBuf>,
    /// Default temporal anchor applied to questions without one.
    pub as_of: Option<NaiveDate>,
    /// Score correctness with a model judge instead of the containment
    /// rule.
    pub llm_judge: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            retriever: None,
            step_budget: 8,
            variant: "rrr_full".into(),
            dataset_path: None,
            dataset_kind: "custom".into(),
            sample_size: 500,
            seed: 7,
            cache_dir: None,
            output_dir: PathBuf::from("runs"),
            concurrency: 4,
            scripted: None,
            corpus_index: None,
            web_fixtures: None,
            prompts_dir: None,
            as_of: None,
            llm_judge: false,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let config: RunConfig = serde_json::from_str(&text)
            .with_context(|| format!("invalid config {}", path.display()))?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.concurrency == 0 {
            bail!("concurrency must be at least 1");
        }
        if self.step_budget == 0 {
            bail!("step_budget must be at least 1");
        }
        if self.retriever.is_some_and(|r| r.top_k == 0) {
            bail!("top_k must be at least 1");
        }
        std::fs::create_dir_all(&self.output_dir).with_context(|| {
            format!(
                "output directory {} is not writable",
                self.output_dir.display()
            )
        })?;
        Ok(())
    }

    /// The retrieval settings in effect: explicit config, else the
    /// dataset kind's default depth.
    pub fn effective_retriever(&self) -> RetrieverConfig {
        self.retriever.unwrap_or_else(|| {
            let top_k = rrr_core::evaluation::DatasetKind::from_name(&self.dataset_kind)
                .map(|k| k.default_top_k())
                .unwrap_or(3);
            RetrieverConfig {
                top_k,
                min_score: 0.0,
            }
        })
    }
}

/// Shared flag overrides accepted by most subcommands.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// Configuration file (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Pipeline variant to run.
    #[arg(long)]
    pub variant: Option<String>,
    /// Sampling seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of records to sample from the dataset.
    #[arg(long)]
    pub sample_size: Option<usize>,
    /// Documents to retrieve per gated step.
    #[arg(long)]
    pub top_k: Option<usize>,
    /// Maximum reasoning steps per question.
    #[arg(long)]
    pub step_budget: Option<usize>,
    /// Questions processed in parallel.
    #[arg(long)]
    pub concurrency: Option<usize>,
    /// Response cache directory.
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    /// Scripted-backend transcript/rules file.
    #[arg(long)]
    pub scripted: Option<PathBuf>,
    /// Persisted corpus index file.
    #[arg(long)]
    pub index: Option<PathBuf>,
    /// Recorded web-fixtures directory.
    #[arg(long)]
    pub web_fixtures: Option<PathBuf>,
    /// Output directory for traces and reports.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Dataset JSONL file.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Dataset kind: freshqa, pat_questions, two_wiki, multihop_rag, custom.
    #[arg(long)]
    pub dataset_kind: Option<String>,
    /// Temporal anchor (YYYY-MM-DD) applied to questions without one.
    #[arg(long)]
    pub as_of: Option<NaiveDate>,
    /// Score correctness with a model judge instead of the containment rule.
    #[arg(long)]
    pub llm_judge: bool,
}

impl Overrides {
    /// Config file plus flag overrides, flags winning.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut config = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = &self.variant {
            config.variant = v.clone();
        }
        if let Some(v) = self.seed {
            config.seed = v;
        }
        if let Some(v) = self.sample_size {
            config.sample_size = v;
        }
        if let Some(v) = self.top_k {
            let min_score = config.retriever.map(|r| r.min_score).unwrap_or(0.0);
            config.retriever = Some(RetrieverConfig {
                top_k: v,
                min_score,
            });
        }
        if let Some(v) = self.step_budget {
            config.step_budget = v;
        }
        if let Some(v) = self.concurrency {
            config.concurrency = v;
        }
        if let Some(v) = &self.cache_dir {
            config.cache_dir = Some(v.clone());
        }
        if let Some(v) = &self.scripted {
            config.scripted = Some(v.clone());
        }
        if let Some(v) = &self.index {
            config.corpus_index = Some(v.clone());
        }
        if let Some(v) = &self.web_fixtures {
            config.web_fixtures = Some(v.clone());
        }
        if let Some(v) = &self.output_dir {
            config.output_dir = v.clone();
        }
        if let Some(v) = &self.dataset {
            config.dataset_path = Some(v.clone());
        }
        if let Some(v) = &self.dataset_kind {
            config.dataset_kind = v.clone();
        }
        if let Some(v) = self.as_of {
            config.as_of = Some(v);
        }
        if self.llm_judge {
            config.llm_judge = true;
        }
        Ok(config)
    }
}
