//! Recorded-fixture web retriever.
//!
//! A directory of JSON files, one per query, named by the query digest.
//! Recording writes fixtures; search replays them, so end-to-end tests
//! never touch the network. A live web adapter can implement
//! [`super::Retriever`] against the same interface.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Document, DocumentSource, RetrievalError, Retriever};

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FixtureDoc {
    id: String,
    #[serde(default)]
    title: String,
    text: String,
    #[serde(default)]
    score: Option<f64>,
}

/// Fixture-backed web retriever.
pub struct FixtureWebAdapter {
    dir: PathBuf,
}

impl FixtureWebAdapter {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, RetrievalError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| {
            RetrievalError::Adapter(format!("cannot create {}: {e}", dir.display()))
        })?;
        Ok(Self { dir })
    }

    /// Digest used as the fixture file name for a query.
    pub fn query_digest(query: &str) -> String {
        let mut hasher = Sha256::new();
        hasher.update(query.as_bytes());
        hex::encode(hasher.finalize())[..16].to_string()
    }

    fn fixture_path(&self, query: &str) -> PathBuf {
        self.dir.join(format!("{}.json", Self::query_digest(query)))
    }

    /// Record canned results for a query.
    pub fn record(&self, query: &str, results: &[Document]) -> Result<(), RetrievalError> {
        let fixture: Vec<FixtureDoc> = results
            .iter()
            .map(|d| FixtureDoc {
                id: d.doc_id.clone(),
                title: d.title.clone(),
                text: d.body.clone(),
                score: Some(d.score),
            })
            .collect();
        let path = self.fixture_path(query);
        let text = serde_json::to_string_pretty(&fixture)
            .map_err(|e| RetrievalError::Adapter(format!("serialize fixture: {e}")))?;
        std::fs::write(&path, text)
            .map_err(|e| RetrievalError::Adapter(format!("write {}: {e}", path.display())))?;
        Ok(())
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

impl Retriever for FixtureWebAdapter {
    fn search(&self, query: &str, top_k: usize) -> Result<Vec<Document>, RetrievalError> {
        let path = self.fixture_path(query);
        let text = std::fs::read_to_string(&path).map_err(|_| {
            RetrievalError::Adapter(format!(
                "no recorded fixture for query {query:?} (expected {})",
                path.display()
            ))
        })?;
        let fixture: Vec<FixtureDoc> = serde_json::from_str(&text)
            .map_err(|e| RetrievalError::Adapter(format!("parse {}: {e}", path.display())))?;
        Ok(fixture
            .into_iter()
            .enumerate()
            .take(top_k)
            .map(|(rank, d)| Document {
                doc_id: d.id,
                title: d.title,
                body: d.text,
                score: d.score.unwrap_or(1.0 / (rank + 1) as f64),
                source: DocumentSource::Web,
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_then_search_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let adapter = FixtureWebAdapter::open(dir.path()).unwrap();
        adapter
            .record(
                "the most-followed user on TikTok June 2024",
                &[Document {
                    doc_id: "web1".into(),
                    title: "Top 10 most-followed TikTok accounts".into(),
                    body: "1 Khaby Lame @khaby.lame 161.8M".into(),
                    score: 3.2,
                    source: DocumentSource::Web,
                }],
            )
            .unwrap();
        let hits = adapter
            .search("the most-followed user on TikTok June 2024", 5)
            .unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].doc_id, "web1");
        assert_eq!(hits[0].source, DocumentSource::Web);
        assert!((hits[0].score - 3.2).abs() < 1e-12);
    }

    #[test]
    fn missing_fixture_is_an_adapter_error() {
        let dir = tempfile::tempdir().unwrap();
        let adapter = FixtureWebAdapter::open(dir.path()).unwrap();
        assert!(matches!(
            adapter.search("unrecorded query", 3),
            Err(RetrievalError::Adapter(_))
        ));
    }

    #[test]
    fn top_k_truncates_fixture_results() {
        let dir = tempfile::tempdir().unwrap();
        let adapter = FixtureWebAdapter::open(dir.path()).unwrap();
        let docs: Vec<Document> = (0..5)
            .map(|i| Document {
                doc_id: format!("d{i}"),
                title: String::new(),
                body: format!("body {i}"),
                score: 5.0 - i as f64,
                source: DocumentSource::Web,
            })
            .collect();
        adapter.record("q", &docs).unwrap();
        assert_eq!(adapter.search("q", 2).unwrap().len(), 2);
    }
}
