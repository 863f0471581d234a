//! Pluggable document retrieval.
//!
//! A self-contained lexical BM25 index over a local corpus is the default
//! retriever; a recorded-fixture web adapter serves the same interface
//! for tests, and any dense or live retriever can be plugged in behind
//! the [`Retriever`] trait. The [`retrieve`] entry point applies the
//! per-step retrieval indicator: when the gate is closed it returns an
//! empty set without touching the underlying retriever.

mod index;
mod web;

pub use index::{
    build_index, load_corpus_jsonl, tokenize, CorpusDocument, CorpusIndex, TOKENIZER_VERSION,
};
pub use web::FixtureWebAdapter;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("duplicate doc_id {0:?} in corpus")]
    DuplicateDocId(String),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("document {0:?} has an empty body")]
    EmptyDocument(String),
    #[error("invalid retriever config: {0}")]
    InvalidConfig(String),
    #[error("adapter error: {0}")]
    Adapter(String),
    #[error("index persistence: {0}")]
    Persist(String),
    #[error("unsupported index format version {found} (expected {expected})")]
    FormatVersion { found: u32, expected: u32 },
    #[error("index built with tokenizer version {found}, this build uses {expected}")]
    TokenizerVersion { found: u32, expected: u32 },
}

/// Where a document came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DocumentSource {
    LocalCorpus,
    Web,
}

impl DocumentSource {
    pub fn label(&self) -> &'static str {
        match self {
            DocumentSource::LocalCorpus => "local corpus",
            DocumentSource::Web => "web",
        }
    }
}

/// A retrieved passage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub title: String,
    pub body: String,
    /// Relevance score set on retrieval; higher is better.
    pub score: f64,
    pub source: DocumentSource,
}

/// Per-dataset retrieval settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrieverConfig {
    /// Number of top-scoring documents returned per call.
    pub top_k: usize,
    /// Minimum score to keep a result; `0.0` disables the filter.
    #[serde(default)]
    pub min_score: f64,
}

impl Default for RetrieverConfig {
    fn default() -> Self {
        Self {
            top_k: 3,
            min_score: 0.0,
        }
    }
}

impl RetrieverConfig {
    pub fn validate(&self) -> Result<(), RetrievalError> {
        if self.top_k == 0 {
            return Err(RetrievalError::InvalidConfig(
                "top_k must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Anything that can serve ranked documents for a query.
pub trait Retriever: Send + Sync {
    fn search(&self, query: &str, top_k: usize) -> Result<Vec<Document>, RetrievalError>;
}

impl<T: Retriever + ?Sized> Retriever for Arc<T> {
    fn search(&self, query: &str, top_k: usize) -> Result<Vec<Document>, RetrievalError> {
        (**self).search(query, top_k)
    }
}

impl<T: Retriever + ?Sized> Retriever for &T {
    fn search(&self, query: &str, top_k: usize) -> Result<Vec<Document>, RetrievalError> {
        (**self).search(query, top_k)
    }
}

/// Indicator-conditioned retrieval: with the gate closed, returns an
/// empty list without any retriever access; with it open, the top-k
/// documents, filtered by `min_score` when enabled.
pub fn retrieve(
    retriever: &dyn Retriever,
    query: &str,
    indicator: bool,
    config: &RetrieverConfig,
) -> Result<Vec<Document>, RetrievalError> {
    config.validate()?;
    if !indicator {
        return Ok(Vec::new());
    }
    let mut documents = retriever.search(query, config.top_k)?;
    if config.min_score != 0.0 {
        documents.retain(|d| d.score >= config.min_score);
    }
    Ok(documents)
}

/// Retriever wrapper counting how often the underlying index is accessed.
pub struct CountingRetriever<R> {
    inner: R,
    accesses: Arc<AtomicU64>,
}

impl<R: Retriever> CountingRetriever<R> {
    pub fn new(inner: R) -> Self {
        Self {
            inner,
            accesses: Arc::new(AtomicU64::new(0)),
        }
    }

    pub fn access_counter(&self) -> Arc<AtomicU64> {
        Arc::clone(&self.accesses)
    }

    pub fn accesses(&self) -> u64 {
        self.accesses.load(Ordering::SeqCst)
    }
}

impl<R: Retriever> Retriever for CountingRetriever<R> {
    fn search(&self, query: &str, top_k: usize) -> Result<Vec<Document>, RetrievalError> {
        self.accesses.fetch_add(1, Ordering::SeqCst);
        self.inner.search(query, top_k)
    }
}

/// Render documents into a bounded context block: per document an
/// attribution line (rank, title, source) followed by leading body text,
/// in order, truncated at a whitespace boundary so the total stays within
/// `max_chars`. Budgets below 100 characters are clamped up to 100.
pub fn snippet(documents: &[Document], max_chars: usize) -> String {
    let budget = max_chars.max(100);
    let mut out = String::new();
    for (rank, doc) in documents.iter().enumerate() {
        let title = if doc.title.trim().is_empty() {
            &doc.doc_id
        } else {
            &doc.title
        };
        let header = format!(
            "[{}] {} (source: {})\n",
            rank + 1,
            title,
            doc.source.label()
        );
        let mut block = header;
        block.push_str(doc.body.trim());
        block.push_str("\n\n");

        if out.len() + block.len() <= budget {
            out.push_str(&block);
            continue;
        }
        // Truncate the final block at a whitespace boundary.
        let remaining = budget.saturating_sub(out.len());
        if remaining == 0 {
            break;
        }
        let mut cut = remaining.min(block.len());
        while cut > 0 && !block.is_char_boundary(cut) {
            cut -= 1;
        }
        let truncated = match block[..cut].rfind(char::is_whitespace) {
            Some(pos) => &block[..pos],
            None => "",
        };
        out.push_str(truncated);
        break;
    }
    while out.ends_with('\n') {
        out.pop();
    }
    out
}
