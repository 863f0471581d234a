//! BM25 equivalence against an independent brute-force oracle.
//!
//! The oracle recomputes Okapi BM25 from first principles (term counts by
//! linear scan, no postings, no shared code with the index) and ranks by
//! (score desc, doc_id asc). The index must agree exactly on ordering and
//! within 1e-9 on scores.

use proptest::prelude::*;

use rrr_core::retrieval::{build_index, tokenize, CorpusDocument, Retriever};

const K1: f64 = 1.2;
const B: f64 = 0.75;

/// Brute-force BM25 over a corpus: score every document containing at
/// least one query term by scanning raw token lists.
fn oracle_rank(corpus: &[(String, String)], query: &str) -> Vec<(String, f64)> {
    let doc_tokens: Vec<(String, Vec<String>)> = corpus
        .iter()
        .map(|(id, text)| (id.clone(), tokenize(text)))
        .collect();
    let n = doc_tokens.len() as f64;
    let avg_len = doc_tokens.iter().map(|(_, t)| t.len() as f64).sum::<f64>() / n;

    let query_terms = tokenize(query);
    let mut scored = Vec::new();
    for (id, tokens) in &doc_tokens {
        let mut score = 0.0;
        let mut matched = false;
        for term in &query_terms {
            let tf = tokens.iter().filter(|t| *t == term).count() as f64;
            if tf == 0.0 {
                continue;
            }
            matched = true;
            let df = doc_tokens
                .iter()
                .filter(|(_, toks)| toks.contains(term))
                .count() as f64;
            let idf = ((n - df + 0.5) / (df + 0.5)).ln();
            let norm =
                (tf * (K1 + 1.0)) / (tf + K1 * (1.0 - B + B * tokens.len() as f64 / avg_len));
            score += idf * norm;
        }
        if matched {
            scored.push((id.clone(), score));
        }
    }
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.0.cmp(&b.0))
    });
    scored
}

fn corpus_strategy() -> impl Strategy<Value = Vec<(String, String)>> {
    // Small vocabulary so query terms actually hit documents and document
    // frequencies vary.
    let word = prop::sample::select(vec![
        "tiktok",
        "khaby",
        "lame",
        "followers",
        "dance",
        "cooking",
        "pasta",
        "recipe",
        "trends",
        "user",
        "video",
        "platform",
    ]);
    let body = prop::collection::vec(word, 1..30).prop_map(|w| w.join(" "));
    prop::collection::vec(body, 1..=10).prop_map(|bodies| {
        bodies
            .into_iter()
            .enumerate()
            .map(|(i, b)| (format!("doc{i:02}"), b))
            .collect()
    })
}

fn query_strategy() -> impl Strategy<Value = String> {
    let word = prop::sample::select(vec![
        "tiktok",
        "khaby",
        "followers",
        "cooking",
        "user",
        "unseen",
    ]);
    prop::collection::vec(word, 1..=6).prop_map(|w| w.join(" "))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn ranking_matches_brute_force_oracle(corpus in corpus_strategy(), query in query_strategy()) {
        let documents: Vec<CorpusDocument> = corpus
            .iter()
            .map(|(id, text)| CorpusDocument {
                id: id.clone(),
                title: String::new(),
                text: text.clone(),
            })
            .collect();
        let index = build_index(&documents).unwrap();

        let expected = oracle_rank(&corpus, &query);
        let got = index.search(&query, corpus.len()).unwrap();

        prop_assert_eq!(got.len(), expected.len(), "candidate sets differ");
        for (doc, (want_id, want_score)) in got.iter().zip(&expected) {
            prop_assert_eq!(&doc.doc_id, want_id, "order differs");
            prop_assert!(
                (doc.score - want_score).abs() <= 1e-9,
                "score mismatch for {}: {} vs {}", doc.doc_id, doc.score, want_score
            );
        }
    }

    #[test]
    fn top_k_is_prefix_of_full_ranking(corpus in corpus_strategy(), query in query_strategy(), k in 1usize..=5) {
        let documents: Vec<CorpusDocument> = corpus
            .iter()
            .map(|(id, text)| CorpusDocument { id: id.clone(), title: String::new(), text: text.clone() })
            .collect();
        let index = build_index(&documents).unwrap();
        let full = index.search(&query, corpus.len()).unwrap();
        let cut = index.search(&query, k).unwrap();
        prop_assert_eq!(cut.len(), full.len().min(k));
        for (a, b) in cut.iter().zip(&full) {
            prop_assert_eq!(&a.doc_id, &b.doc_id);
        }
    }
}

#[test]
fn spec_toy_corpus_case() {
    let corpus = vec![
        ("d1".to_string(), "khaby lame tiktok followers".to_string()),
        ("d2".to_string(), "cooking pasta recipe".to_string()),
        ("d3".to_string(), "tiktok dance trends".to_string()),
    ];
    let oracle = oracle_rank(&corpus, "most-followed user on tiktok");
    let ids: Vec<&str> = oracle.iter().map(|(id, _)| id.as_str()).collect();
    assert_eq!(ids, vec!["d1", "d3"], "oracle ordering");

    let documents: Vec<CorpusDocument> = corpus
        .iter()
        .map(|(id, text)| CorpusDocument {
            id: id.clone(),
            title: String::new(),
            text: text.clone(),
        })
        .collect();
    let index = build_index(&documents).unwrap();
    let got = index.search("most-followed user on tiktok", 2).unwrap();
    assert_eq!(got.len(), 2);
    for (doc, (want_id, want_score)) in got.iter().zip(&oracle) {
        assert_eq!(&doc.doc_id, want_id);
        assert!((doc.score - want_score).abs() <= 1e-9);
    }
}
