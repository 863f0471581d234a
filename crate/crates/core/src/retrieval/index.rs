//! Okapi BM25 index over a local corpus.
//!
//! Scoring uses the original Okapi inverse document frequency
//! `ln((N - df + 0.5) / (df + 0.5))`, which goes negative for terms
//! occurring in more than half the corpus; only documents containing at
//! least one query term are candidates, ranked by score descending with
//! ties broken by ascending `doc_id`.
//!
//! The tokenizer is fixed and versioned: lowercase, replace any
//! non-alphanumeric character with a space, split on whitespace. Indexes
//! persist with the tokenizer version; loading an index built with a
//! different tokenizer fails rather than silently mis-scoring.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Document, DocumentSource, RetrievalError, Retriever};

/// Bumped whenever [`tokenize`] changes behavior.
pub const TOKENIZER_VERSION: u32 = 1;

const FORMAT_VERSION: u32 = 1;

pub const DEFAULT_K1: f64 = 1.2;
pub const DEFAULT_B: f64 = 0.75;

/// One corpus input document, as read from JSONL (`id`, `title`, `text`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusDocument {
    pub id: String,
    #[serde(default)]
    pub title: String,
    pub text: String,
}

/// Tokenize text for indexing and querying.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect::<String>()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StoredDoc {
    title: String,
    body: String,
}

/// Immutable BM25 corpus index.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusIndex {
    format_version: u32,
    tokenizer_version: u32,
    pub k1: f64,
    pub b: f64,
    pub doc_count: usize,
    pub avg_doc_length: f64,
    /// term -> (doc_id -> term frequency)
    postings: BTreeMap<String, BTreeMap<String, u32>>,
    /// doc_id -> token count
    doc_lengths: BTreeMap<String, u32>,
    docs: BTreeMap<String, StoredDoc>,
}

/// Build an index over a corpus. Document bodies are what gets indexed;
/// titles are carried as display metadata.
pub fn build_index(documents: &[CorpusDocument]) -> Result<CorpusIndex, RetrievalError> {
    if documents.is_empty() {
        return Err(RetrievalError::EmptyCorpus);
    }

    let mut postings: BTreeMap<String, BTreeMap<String, u32>> = BTreeMap::new();
    let mut doc_lengths: BTreeMap<String, u32> = BTreeMap::new();
    let mut docs: BTreeMap<String, StoredDoc> = BTreeMap::new();

    for doc in documents {
        if doc.text.trim().is_empty() {
            return Err(RetrievalError::EmptyDocument(doc.id.clone()));
        }
        if docs.contains_key(&doc.id) {
            return Err(RetrievalError::DuplicateDocId(doc.id.clone()));
        }
        let tokens = tokenize(&doc.text);
        doc_lengths.insert(doc.id.clone(), tokens.len() as u32);
        for token in tokens {
            *postings
                .entry(token)
                .or_default()
                .entry(doc.id.clone())
                .or_insert(0) += 1;
        }
        docs.insert(
            doc.id.clone(),
            StoredDoc {
                title: doc.title.clone(),
                body: doc.text.clone(),
            },
        );
    }

    let doc_count = docs.len();
    let total: u64 = doc_lengths.values().map(|&n| n as u64).sum();
    let avg_doc_length = total as f64 / doc_count as f64;

    Ok(CorpusIndex {
        format_version: FORMAT_VERSION,
        tokenizer_version: TOKENIZER_VERSION,
        k1: DEFAULT_K1,
        b: DEFAULT_B,
        doc_count,
        avg_doc_length,
        postings,
        doc_lengths,
        docs,
    })
}

impl CorpusIndex {
    /// Score candidates for a query: every document containing at least
    /// one query term, ordered by (score desc, doc_id asc). No top-k cut.
    pub fn score_all(&self, query: &str) -> Vec<(String, f64)> {
        let mut scores: BTreeMap<&str, f64> = BTreeMap::new();
        for term in tokenize(query) {
            let Some(per_doc) = self.postings.get(&term) else {
                continue;
            };
            let df = per_doc.len() as f64;
            let n = self.doc_count as f64;
            let idf = ((n - df + 0.5) / (df + 0.5)).ln();
            for (doc_id, &tf) in per_doc {
                let dl = f64::from(self.doc_lengths[doc_id]);
                let tf = f64::from(tf);
                let norm = (tf * (self.k1 + 1.0))
                    / (tf + self.k1 * (1.0 - self.b + self.b * dl / self.avg_doc_length));
                *scores.entry(doc_id.as_str()).or_insert(0.0) += idf * norm;
            }
        }
        let mut ranked: Vec<(String, f64)> = scores
            .into_iter()
            .map(|(id, s)| (id.to_string(), s))
            .collect();
        ranked.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.0.cmp(&b.0))
        });
        ranked
    }

    fn to_document(&self, doc_id: &str, score: f64) -> Document {
        let stored = &self.docs[doc_id];
        Document {
            doc_id: doc_id.to_string(),
            title: stored.title.clone(),
            body: stored.body.clone(),
            score,
            source: DocumentSource::LocalCorpus,
        }
    }

    /// Persist to a single JSON file with a format-version header.
    pub fn save(&self, path: &Path) -> Result<(), RetrievalError> {
        let text = serde_json::to_string(self)
            .map_err(|e| RetrievalError::Persist(format!("serialize: {e}")))?;
        std::fs::write(path, text)
            .map_err(|e| RetrievalError::Persist(format!("write {}: {e}", path.display())))?;
        Ok(())
    }

    /// Load a persisted index, checking format and tokenizer versions and
    /// the average-length invariant.
    pub fn load(path: &Path) -> Result<Self, RetrievalError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RetrievalError::Persist(format!("read {}: {e}", path.display())))?;
        let index: CorpusIndex = serde_json::from_str(&text)
            .map_err(|e| RetrievalError::Persist(format!("parse {}: {e}", path.display())))?;
        if index.format_version != FORMAT_VERSION {
            return Err(RetrievalError::FormatVersion {
                found: index.format_version,
                expected: FORMAT_VERSION,
            });
        }
        if index.tokenizer_version != TOKENIZER_VERSION {
            return Err(RetrievalError::TokenizerVersion {
                found: index.tokenizer_version,
                expected: TOKENIZER_VERSION,
            });
        }
        let total: u64 = index.doc_lengths.values().map(|&n| n as u64).sum();
        let expected_avg = total as f64 / index.doc_count.max(1) as f64;
        if (index.avg_doc_length - expected_avg).abs() > 1e-9 * expected_avg.max(1.0) {
            return Err(RetrievalError::Persist(format!(
                "avg_doc_length {} inconsistent with doc_lengths (expected {expected_avg})",
                index.avg_doc_length
            )));
        }
        Ok(index)
    }
}

impl Retriever for CorpusIndex {
    fn search(&self, query: &str, top_k: usize) -> Result<Vec<Document>, RetrievalError> {
        Ok(self
            .score_all(query)
            .into_iter()
            .take(top_k)
            .map(|(doc_id, score)| self.to_document(&doc_id, score))
            .collect())
    }
}

/// Read a corpus from JSONL: one object per line with fields `id`,
/// `title` (optional), `text`.
pub fn load_corpus_jsonl(path: &Path) -> Result<Vec<CorpusDocument>, RetrievalError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| RetrievalError::Persist(format!("read {}: {e}", path.display())))?;
    let mut documents = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let doc: CorpusDocument = serde_json::from_str(line).map_err(|e| {
            RetrievalError::Persist(format!("{} line {}: {e}", path.display(), lineno + 1))
        })?;
        documents.push(doc);
    }
    Ok(documents)
}
