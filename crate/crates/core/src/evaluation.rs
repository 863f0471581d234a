//! Dataset loading, sampling, answer normalization, and the accuracy/F1
//! metrics, plus report rendering.
//!
//! Normalization follows the common QA convention: lowercase, strip
//! punctuation, drop English articles, collapse whitespace. Accuracy is
//! normalized exact-or-containment match (any gold answer equal to, or
//! appearing as a contiguous token run inside, the prediction), resolved
//! by max over multiple golds. Token F1 is computed over token multisets.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::ChatMessage;
use crate::pipeline::PipelineTrace;
use crate::session::ModelSession;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("dataset file not found: {0}")]
    FileNotFound(String),
    #[error("schema errors in {path}: {}", issues.join("; "))]
    Schema { path: String, issues: Vec<String> },
    #[error("traces without matching records: {}", .0.join(", "))]
    UnmatchedTrace(Vec<String>),
    #[error("invalid input: {0}")]
    EmptyInput(String),
    #[error("llm judge: {0}")]
    Judge(String),
}

/// Which dataset a record came from, fixing its field map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Freshqa,
    PatQuestions,
    TwoWiki,
    MultihopRag,
    Custom,
}

impl DatasetKind {
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "freshqa" => Some(Self::Freshqa),
            "pat_questions" => Some(Self::PatQuestions),
            "two_wiki" | "2wikimultihopqa" => Some(Self::TwoWiki),
            "multihop_rag" | "multihoprag" => Some(Self::MultihopRag),
            "custom" => Some(Self::Custom),
            _ => None,
        }
    }

    /// Default retrieval depth per dataset.
    pub fn default_top_k(&self) -> usize {
        match self {
            DatasetKind::Freshqa => 5,
            _ => 3,
        }
    }
}

/// Single-hop vs multi-hop classification for dynamic datasets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HopClass {
    SingleHop,
    MultiHop,
}

/// One gold-labeled dataset row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub record_id: String,
    pub question: String,
    pub gold_answers: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hop_class: Option<HopClass>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temporal_anchor: Option<NaiveDate>,
    pub dataset: DatasetKind,
}

fn parse_hop(value: &str) -> Option<HopClass> {
    match value.to_lowercase().replace(['-', '_'], " ").as_str() {
        "single hop" | "single" | "one hop" => Some(HopClass::SingleHop),
        "multi hop" | "multi" | "multihop" => Some(HopClass::MultiHop),
        _ => None,
    }
}

fn string_field(obj: &serde_json::Map<String, serde_json::Value>, keys: &[&str]) -> Option<String> {
    keys.iter()
        .find_map(|k| obj.get(*k).and_then(|v| v.as_str()).map(str::to_string))
}

fn answers_field(obj: &serde_json::Map<String, serde_json::Value>) -> Vec<String> {
    if let Some(list) = obj.get("answers").or_else(|| obj.get("gold_answers")) {
        if let Some(arr) = list.as_array() {
            return arr
                .iter()
                .filter_map(|v| v.as_str().map(str::to_string))
                .filter(|s| !s.trim().is_empty())
                .collect();
        }
    }
    if let Some(answer) = obj.get("answer").and_then(|v| v.as_str()) {
        if !answer.trim().is_empty() {
            return vec![answer.to_string()];
        }
    }
    // FreshQA-style answer_0..answer_9 columns.
    let mut numbered = Vec::new();
    for i in 0..10 {
        if let Some(a) = obj.get(&format!("answer_{i}")).and_then(|v| v.as_str()) {
            if !a.trim().is_empty() {
                numbered.push(a.to_string());
            }
        }
    }
    numbered
}

/// Load a JSONL dataset through the per-dataset field map. Malformed
/// lines are collected and reported together rather than silently
/// dropped.
pub fn load_dataset(path: &Path, kind: DatasetKind) -> Result<Vec<EvalRecord>, EvalError> {
    let text = std::fs::read_to_string(path)
        .map_err(|_| EvalError::FileNotFound(path.display().to_string()))?;

    let mut records = Vec::new();
    let mut issues = Vec::new();

    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = match serde_json::from_str(line) {
            Ok(v) => v,
            Err(e) => {
                issues.push(format!("line {lineno}: invalid JSON ({e})"));
                continue;
            }
        };
        let Some(obj) = value.as_object() else {
            issues.push(format!("line {lineno}: not a JSON object"));
            continue;
        };

        let question = match kind {
            DatasetKind::MultihopRag => string_field(obj, &["query", "question"]),
            _ => string_field(obj, &["question"]),
        };
        let Some(question) = question.filter(|q| !q.trim().is_empty()) else {
            issues.push(format!("line {lineno}: missing question"));
            continue;
        };

        let gold_answers = answers_field(obj);
        if gold_answers.is_empty() {
            issues.push(format!("line {lineno}: missing gold answers"));
            continue;
        }

        let record_id = string_field(obj, &["id", "_id", "record_id", "question_id"])
            .unwrap_or_else(|| format!("{}-{lineno}", dataset_prefix(kind)));

        let hop_class = match kind {
            DatasetKind::Freshqa => {
                string_field(obj, &["num_hops", "hop"]).and_then(|s| parse_hop(&s))
            }
            DatasetKind::PatQuestions | DatasetKind::Custom => {
                string_field(obj, &["hop", "hop_class", "num_hops"]).and_then(|s| parse_hop(&s))
            }
            DatasetKind::TwoWiki | DatasetKind::MultihopRag => None,
        };

        let temporal_anchor = string_field(obj, &["as_of", "temporal_anchor"])
            .and_then(|s| NaiveDate::parse_from_str(&s, "%Y-%m-%d").ok());

        records.push(EvalRecord {
            record_id,
            question,
            gold_answers,
            hop_class,
            temporal_anchor,
            dataset: kind,
        });
    }

    if !issues.is_empty() {
        return Err(EvalError::Schema {
            path: path.display().to_string(),
            issues,
        });
    }
    Ok(records)
}

fn dataset_prefix(kind: DatasetKind) -> &'static str {
    match kind {
        DatasetKind::Freshqa => "freshqa",
        DatasetKind::PatQuestions => "pat",
        DatasetKind::TwoWiki => "2wiki",
        DatasetKind::MultihopRag => "mhrag",
        DatasetKind::Custom => "custom",
    }
}

/// Deterministic pseudo-random subset of size `min(n, len)`, preserving
/// dataset order within the subset. The same seed yields the same subset.
pub fn sample(records: &[EvalRecord], n: usize, seed: u64) -> Vec<EvalRecord> {
    if n >= records.len() {
        return records.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = (0..records.len()).collect();
    indices.shuffle(&mut rng);
    let mut chosen: Vec<usize> = indices.into_iter().take(n).collect();
    chosen.sort_unstable();
    chosen.into_iter().map(|i| records[i].clone()).collect()
}

/// Standard QA answer normalization: lowercase, strip punctuation, drop
/// English articles, collapse whitespace.
pub fn normalize_answer(text: &str) -> String {
    let lowered = text.to_lowercase();
    let no_punct: String = lowered
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect();
    no_punct
        .split_whitespace()
        .filter(|tok| !matches!(*tok, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn tokens(text: &str) -> Vec<String> {
    normalize_answer(text)
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

/// A prediction is correct when any normalized gold answer equals the
/// normalized prediction or appears in it as a contiguous token run.
pub fn is_correct(prediction: &str, gold_answers: &[String]) -> bool {
    let pred_tokens = tokens(prediction);
    gold_answers.iter().any(|gold| {
        let gold_tokens = tokens(gold);
        if gold_tokens.is_empty() {
            return false;
        }
        if pred_tokens == gold_tokens {
            return true;
        }
        pred_tokens
            .windows(gold_tokens.len())
            .any(|window| window == gold_tokens.as_slice())
    })
}

fn token_f1_single(prediction: &str, gold: &str) -> f64 {
    let pred = tokens(prediction);
    let gold = tokens(gold);
    if pred.is_empty() || gold.is_empty() {
        return 0.0;
    }
    let mut gold_counts: BTreeMap<&str, usize> = BTreeMap::new();
    for t in &gold {
        *gold_counts.entry(t.as_str()).or_insert(0) += 1;
    }
    let mut overlap = 0usize;
    for t in &pred {
        if let Some(count) = gold_counts.get_mut(t.as_str()) {
            if *count > 0 {
                *count -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / pred.len() as f64;
    let recall = overlap as f64 / gold.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Token-multiset F1 between a prediction and gold answers; against
/// multiple golds the maximum is taken.
pub fn token_f1(prediction: &str, gold_answers: &[String]) -> f64 {
    gold_answers
        .iter()
        .map(|g| token_f1_single(prediction, g))
        .fold(0.0, f64::max)
}

/// Accuracy within one hop class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub count: usize,
    pub correct: usize,
    pub accuracy: f64,
}

impl ClassStats {
    fn from_counts(count: usize, correct: usize) -> Self {
        Self {
            count,
            correct,
            accuracy: if count == 0 {
                0.0
            } else {
                correct as f64 / count as f64
            },
        }
    }
}

/// One scored record in the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub record_id: String,
    pub prediction: String,
    pub gold_answers: Vec<String>,
    pub correct: bool,
    pub f1: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hop_class: Option<HopClass>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

/// The scored accuracy/F1 breakdown over one evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub variant: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub sample_size: usize,
    pub overall_accuracy: f64,
    pub mean_f1: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub single_hop: Option<ClassStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub multi_hop: Option<ClassStats>,
    /// Records without a hop label; class counts sum to the sample size.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unlabeled: Option<ClassStats>,
    /// Total retriever invocations across all traces.
    pub retriever_calls: u64,
    /// Correctness decided by the model judge instead of the containment
    /// rule.
    #[serde(default)]
    pub llm_judge: bool,
    pub rows: Vec<ReportRow>,
}

/// Score traces against their records.
///
/// Every trace must match a record by question id; records without a
/// trace are scored as incorrect with the failure noted. Rows come back
/// sorted by record id.
pub fn evaluate(traces: &[PipelineTrace], records: &[EvalRecord]) -> Result<EvalReport, EvalError> {
    if traces.is_empty() {
        return Err(EvalError::EmptyInput("no traces to evaluate".into()));
    }
    if records.is_empty() {
        return Err(EvalError::EmptyInput(
            "no records to evaluate against".into(),
        ));
    }

    let by_id: BTreeMap<&str, &EvalRecord> =
        records.iter().map(|r| (r.record_id.as_str(), r)).collect();

    let orphans: Vec<String> = traces
        .iter()
        .filter(|t| !by_id.contains_key(t.query.question_id.as_str()))
        .map(|t| t.query.question_id.clone())
        .collect();
    if !orphans.is_empty() {
        return Err(EvalError::UnmatchedTrace(orphans));
    }

    let trace_by_id: BTreeMap<&str, &PipelineTrace> = traces
        .iter()
        .map(|t| (t.query.question_id.as_str(), t))
        .collect();

    let mut rows = Vec::with_capacity(records.len());
    let mut retriever_calls = 0u64;
    for record in records {
        let trace = trace_by_id.get(record.record_id.as_str());
        let (prediction, failure) = match trace {
            Some(t) => {
                retriever_calls += t.retriever_calls() as u64;
                (t.final_answer.clone(), t.aborted.clone())
            }
            None => (String::new(), Some("no trace produced".to_string())),
        };
        let correct = !prediction.is_empty() && is_correct(&prediction, &record.gold_answers);
        let f1 = token_f1(&prediction, &record.gold_answers);
        rows.push(ReportRow {
            record_id: record.record_id.clone(),
            prediction,
            gold_answers: record.gold_answers.clone(),
            correct,
            f1,
            hop_class: record.hop_class,
            failure,
        });
    }
    rows.sort_by(|a, b| a.record_id.cmp(&b.record_id));

    let mut report = EvalReport {
        variant: String::new(),
        seed: None,
        sample_size: rows.len(),
        overall_accuracy: 0.0,
        mean_f1: 0.0,
        single_hop: None,
        multi_hop: None,
        unlabeled: None,
        retriever_calls,
        llm_judge: false,
        rows,
    };
    report.recompute_stats();
    Ok(report)
}

fn parse_verdict(text: &str) -> Option<bool> {
    let first = text
        .split(|c: char| !c.is_alphabetic())
        .find(|t| !t.is_empty())?
        .to_lowercase();
    match first.as_str() {
        "yes" => Some(true),
        "no" => Some(false),
        _ => None,
    }
}

/// Model-judged correctness for free-form answers: one call asking for a
/// yes/no verdict, with one corrective reprompt on malformed output.
pub fn judge_correct(
    session: &ModelSession<'_>,
    question: &str,
    prediction: &str,
    gold_answers: &[String],
) -> Result<bool, EvalError> {
    let golds = gold_answers.join("\n");
    let prompt = session
        .render(
            "judge",
            &[
                ("question", question),
                ("golds", golds.as_str()),
                ("prediction", prediction),
            ],
        )
        .map_err(|e| EvalError::Judge(e.to_string()))?;
    let exchange = session
        .call_user(prompt.clone())
        .map_err(|e| EvalError::Judge(e.to_string()))?;
    if let Some(verdict) = parse_verdict(&exchange.response_text) {
        return Ok(verdict);
    }
    let retry = session
        .call(vec![
            ChatMessage::user(prompt),
            ChatMessage::assistant(exchange.response_text),
            ChatMessage::user("Reply with exactly one word: yes or no."),
        ])
        .map_err(|e| EvalError::Judge(e.to_string()))?;
    parse_verdict(&retry.response_text).ok_or_else(|| {
        EvalError::Judge(format!(
            "verdict unparseable after reprompt: {:?}",
            retry.response_text.chars().take(60).collect::<String>()
        ))
    })
}

/// Replace the containment-rule correctness with model-judged verdicts
/// and recompute the accuracy breakdown.
pub fn rescore_with_judge(
    report: &mut EvalReport,
    records: &[EvalRecord],
    session: &ModelSession<'_>,
) -> Result<(), EvalError> {
    let by_id: BTreeMap<&str, &EvalRecord> =
        records.iter().map(|r| (r.record_id.as_str(), r)).collect();
    for row in &mut report.rows {
        let record = by_id
            .get(row.record_id.as_str())
            .ok_or_else(|| EvalError::UnmatchedTrace(vec![row.record_id.clone()]))?;
        row.correct = !row.prediction.is_empty()
            && judge_correct(
                session,
                &record.question,
                &row.prediction,
                &record.gold_answers,
            )?;
    }
    report.llm_judge = true;
    report.recompute_stats();
    Ok(())
}

impl EvalReport {
    fn recompute_stats(&mut self) {
        let total = self.rows.len();
        if total == 0 {
            return;
        }
        let correct = self.rows.iter().filter(|r| r.correct).count();
        self.overall_accuracy = correct as f64 / total as f64;
        self.mean_f1 = self.rows.iter().map(|r| r.f1).sum::<f64>() / total as f64;
        let class_stats = |class: Option<HopClass>| -> Option<ClassStats> {
            let of_class: Vec<&ReportRow> =
                self.rows.iter().filter(|r| r.hop_class == class).collect();
            if of_class.is_empty() {
                None
            } else {
                Some(ClassStats::from_counts(
                    of_class.len(),
                    of_class.iter().filter(|r| r.correct).count(),
                ))
            }
        };
        self.single_hop = class_stats(Some(HopClass::SingleHop));
        self.multi_hop = class_stats(Some(HopClass::MultiHop));
        self.unlabeled = class_stats(None);
    }

    pub fn to_json_pretty(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }

    /// Per-record CSV with a header row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("record_id,hop_class,correct,f1,prediction,gold\n");
        for row in &self.rows {
            let hop = match row.hop_class {
                Some(HopClass::SingleHop) => "single_hop",
                Some(HopClass::MultiHop) => "multi_hop",
                None => "",
            };
            out.push_str(&format!(
                "{},{},{},{:.4},{},{}\n",
                csv_escape(&row.record_id),
                hop,
                row.correct,
                row.f1,
                csv_escape(&row.prediction),
                csv_escape(&row.gold_answers.join("|")),
            ));
        }
        out
    }

    /// Aligned text summary table.
    pub fn to_text_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("variant            {}\n", self.variant));
        if let Some(seed) = self.seed {
            out.push_str(&format!("seed               {seed}\n"));
        }
        out.push_str(&format!("sample size        {}\n", self.sample_size));
        if self.llm_judge {
            out.push_str("accuracy rule      llm judge\n");
        }
        out.push_str(&format!(
            "overall accuracy   {:.4}\n",
            self.overall_accuracy
        ));
        out.push_str(&format!("mean F1            {:.4}\n", self.mean_f1));
        if let Some(s) = self.single_hop {
            out.push_str(&format!(
                "single-hop acc.    {:.4} ({}/{})\n",
                s.accuracy, s.correct, s.count
            ));
        }
        if let Some(s) = self.multi_hop {
            out.push_str(&format!(
                "multi-hop acc.     {:.4} ({}/{})\n",
                s.accuracy, s.correct, s.count
            ));
        }
        if let Some(s) = self.unlabeled {
            out.push_str(&format!(
                "unlabeled          {}/{} correct\n",
                s.correct, s.count
            ));
        }
        out.push_str(&format!("retriever calls    {}\n", self.retriever_calls));
        out
    }
}

fn csv_escape(field: &str) -> String {
    if field.contains([',', '"', '\n']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::OriginalQuery;

    fn record(id: &str, question: &str, golds: &[&str], hop: Option<HopClass>) -> EvalRecord {
        EvalRecord {
            record_id: id.into(),
            question: question.into(),
            gold_answers: golds.iter().map(|s| s.to_string()).collect(),
            hop_class: hop,
            temporal_anchor: None,
            dataset: DatasetKind::Custom,
        }
    }

    fn trace_answering(id: &str, answer: &str) -> PipelineTrace {
        let q = OriginalQuery::new(id, "question").unwrap();
        let mut t = PipelineTrace::new(q, "vanilla", "digest");
        t.final_answer = answer.into();
        t
    }

    #[test]
    fn normalize_drops_articles_and_punctuation() {
        assert_eq!(
            normalize_answer("The Road to Istanbul."),
            "road to istanbul"
        );
        assert_eq!(normalize_answer("24"), "24");
        assert_eq!(normalize_answer("  Khaby   Lame "), "khaby lame");
    }

    #[test]
    fn is_correct_containment() {
        let gold = vec!["24".to_string()];
        assert!(is_correct(
            "As of June 2024, the most-followed user on TikTok is Khaby Lame, he is 24 years old",
            &gold
        ));
        assert!(!is_correct(
            "insufficient information",
            &["Google".to_string()]
        ));
        assert!(is_correct("google", &["Google".to_string()]));
    }

    #[test]
    fn is_correct_requires_whole_tokens() {
        // "124" must not match gold "24".
        assert!(!is_correct("the value is 124 years", &["24".to_string()]));
    }

    #[test]
    fn token_f1_known_values() {
        assert!(
            (token_f1("identical answer", &["identical answer".to_string()]) - 1.0).abs() < 1e-12
        );
        assert_eq!(token_f1("alpha beta", &["gamma delta".to_string()]), 0.0);
        // Frozen from the brute-force token-overlap oracle: P=2/3, R=1.
        let f1 = token_f1("edin terzic coach", &["edin terzic".to_string()]);
        assert!((f1 - 0.8).abs() < 1e-12, "got {f1}");
    }

    #[test]
    fn token_f1_max_over_golds() {
        let golds = vec!["nothing shared".to_string(), "edin terzic".to_string()];
        assert!((token_f1("edin terzic coach", &golds) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn sample_is_deterministic_and_clamped() {
        let records: Vec<EvalRecord> = (0..20)
            .map(|i| record(&format!("r{i:02}"), "q", &["a"], None))
            .collect();
        let a = sample(&records, 5, 7);
        let b = sample(&records, 5, 7);
        assert_eq!(a, b);
        assert_eq!(a.len(), 5);
        let c = sample(&records, 100, 7);
        assert_eq!(c.len(), 20);
        let d = sample(&records, 1, 3);
        assert_eq!(d.len(), 1);
        let e = sample(&records, 5, 8);
        assert_ne!(a, e, "different seeds should give different subsets");
    }

    #[test]
    fn evaluate_per_class_accuracy() {
        let records = vec![
            record("r1", "q1", &["yes"], Some(HopClass::SingleHop)),
            record("r2", "q2", &["no"], Some(HopClass::SingleHop)),
            record("r3", "q3", &["alpha"], Some(HopClass::MultiHop)),
            record("r4", "q4", &["beta"], Some(HopClass::MultiHop)),
        ];
        let traces = vec![
            trace_answering("r1", "yes"),
            trace_answering("r2", "yes"),
            trace_answering("r3", "alpha"),
            trace_answering("r4", "beta"),
        ];
        let report = evaluate(&traces, &records).unwrap();
        assert!((report.single_hop.unwrap().accuracy - 0.5).abs() < 1e-12);
        assert!((report.multi_hop.unwrap().accuracy - 1.0).abs() < 1e-12);
        assert!((report.overall_accuracy - 0.75).abs() < 1e-12);
        assert!(report.unlabeled.is_none());
    }

    #[test]
    fn class_counts_sum_to_sample_size() {
        let records = vec![
            record("r1", "q1", &["yes"], Some(HopClass::SingleHop)),
            record("r2", "q2", &["no"], Some(HopClass::MultiHop)),
            record("r3", "q3", &["alpha"], None),
        ];
        let traces = vec![
            trace_answering("r1", "yes"),
            trace_answering("r2", "no"),
            trace_answering("r3", "alpha"),
        ];
        let report = evaluate(&traces, &records).unwrap();
        let total = report.single_hop.map_or(0, |s| s.count)
            + report.multi_hop.map_or(0, |s| s.count)
            + report.unlabeled.map_or(0, |s| s.count);
        assert_eq!(total, report.sample_size);
    }

    #[test]
    fn evaluate_rejects_orphan_traces() {
        let records = vec![record("r1", "q1", &["yes"], None)];
        let traces = vec![trace_answering("r1", "yes"), trace_answering("ghost", "no")];
        match evaluate(&traces, &records) {
            Err(EvalError::UnmatchedTrace(ids)) => assert_eq!(ids, vec!["ghost"]),
            other => panic!("expected unmatched trace error, got {other:?}"),
        }
    }

    #[test]
    fn evaluate_rejects_empty_inputs() {
        let records = vec![record("r1", "q1", &["yes"], None)];
        assert!(matches!(
            evaluate(&[], &records),
            Err(EvalError::EmptyInput(_))
        ));
    }

    #[test]
    fn evaluate_scores_missing_trace_as_incorrect() {
        let records = vec![
            record("r1", "q1", &["yes"], None),
            record("r2", "q2", &["no"], None),
        ];
        let traces = vec![trace_answering("r1", "yes")];
        let report = evaluate(&traces, &records).unwrap();
        assert!((report.overall_accuracy - 0.5).abs() < 1e-12);
        let failed = report.rows.iter().find(|r| r.record_id == "r2").unwrap();
        assert!(!failed.correct);
        assert!(failed.failure.as_deref() == Some("no trace produced"));
    }

    #[test]
    fn evaluate_all_correct_yields_ones() {
        let records = vec![
            record("r1", "q1", &["alpha"], Some(HopClass::SingleHop)),
            record("r2", "q2", &["beta"], Some(HopClass::MultiHop)),
        ];
        let traces = vec![
            trace_answering("r1", "alpha"),
            trace_answering("r2", "beta"),
        ];
        let report = evaluate(&traces, &records).unwrap();
        assert!((report.overall_accuracy - 1.0).abs() < 1e-12);
        assert!((report.mean_f1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn evaluate_is_permutation_invariant() {
        let records = vec![
            record("r1", "q1", &["alpha"], None),
            record("r2", "q2", &["beta"], None),
        ];
        let t1 = trace_answering("r1", "alpha");
        let t2 = trace_answering("r2", "wrong");
        let a = evaluate(&[t1.clone(), t2.clone()], &records).unwrap();
        let b = evaluate(&[t2, t1], &records).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn load_custom_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        std::fs::write(
            &path,
            concat!(
                "{\"id\":\"c1\",\"question\":\"q one\",\"answers\":[\"a\",\"b\"],\"hop\":\"single\"}\n",
                "{\"id\":\"c2\",\"question\":\"q two\",\"answer\":\"only\",\"as_of\":\"2024-06-01\"}\n",
                "{\"id\":\"c3\",\"question\":\"q three\",\"answer\":\"x\",\"hop\":\"multi\"}\n",
            ),
        )
        .unwrap();
        let records = load_dataset(&path, DatasetKind::Custom).unwrap();
        assert_eq!(records.len(), 3);
        assert_eq!(records[0].gold_answers, vec!["a", "b"]);
        assert_eq!(records[0].hop_class, Some(HopClass::SingleHop));
        assert_eq!(
            records[1].temporal_anchor,
            Some(NaiveDate::from_ymd_opt(2024, 6, 1).unwrap())
        );
        assert_eq!(records[2].hop_class, Some(HopClass::MultiHop));
    }

    #[test]
    fn load_reports_missing_answers_with_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        std::fs::write(
            &path,
            "{\"id\":\"c1\",\"question\":\"ok\",\"answer\":\"a\"}\n{\"id\":\"c2\",\"question\":\"broken\"}\n",
        )
        .unwrap();
        match load_dataset(&path, DatasetKind::Custom) {
            Err(EvalError::Schema { issues, .. }) => {
                assert_eq!(issues.len(), 1);
                assert!(issues[0].contains("line 2"));
            }
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn load_freshqa_field_map() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("freshqa.jsonl");
        std::fs::write(
            &path,
            "{\"question\":\"How old is the most-followed user on TikTok?\",\"num_hops\":\"multi-hop\",\"answer_0\":\"24\",\"answer_1\":\"24 years old\"}\n",
        )
        .unwrap();
        let records = load_dataset(&path, DatasetKind::Freshqa).unwrap();
        assert_eq!(records[0].hop_class, Some(HopClass::MultiHop));
        assert_eq!(records[0].gold_answers, vec!["24", "24 years old"]);
    }

    #[test]
    fn load_multihoprag_field_map() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mhrag.jsonl");
        std::fs::write(
            &path,
            "{\"query\":\"Which company?\",\"answer\":\"Google\"}\n",
        )
        .unwrap();
        let records = load_dataset(&path, DatasetKind::MultihopRag).unwrap();
        assert_eq!(records[0].question, "Which company?");
        assert_eq!(records[0].gold_answers, vec!["Google"]);
    }

    #[test]
    fn missing_file_is_file_not_found() {
        assert!(matches!(
            load_dataset(Path::new("/definitely/missing.jsonl"), DatasetKind::Custom),
            Err(EvalError::FileNotFound(_))
        ));
    }

    #[test]
    fn judge_parses_verdicts_and_reprompts_once() {
        use crate::backend::{ModelConfig, ScriptedBackend};
        use crate::prompts::TemplateSet;

        let backend = ScriptedBackend::transcript(["Yes.", "hmm let me think", "no"]);
        let config = ModelConfig::default();
        let templates = TemplateSet::embedded();
        let session = ModelSession::new(&backend, &config, &templates);

        let golds = vec!["Khaby Lame".to_string()];
        assert!(judge_correct(&session, "who?", "It is Khaby Lame", &golds).unwrap());
        // Second judgment needs the corrective reprompt before the "no".
        assert!(!judge_correct(&session, "who?", "It is someone else", &golds).unwrap());
        assert_eq!(backend.calls_made(), 3);
    }

    #[test]
    fn rescore_with_judge_overrides_containment() {
        use crate::backend::{ModelConfig, ScriptRule, ScriptedBackend};
        use crate::prompts::TemplateSet;

        let records = vec![
            record(
                "r1",
                "q one",
                &["the correct phrasing"],
                Some(HopClass::SingleHop),
            ),
            record("r2", "q two", &["beta"], Some(HopClass::SingleHop)),
        ];
        // r1's prediction fails containment but the judge accepts it; the
        // judge rejects r2's exact match.
        let traces = vec![
            trace_answering("r1", "an equivalent paraphrase"),
            trace_answering("r2", "beta"),
        ];
        let mut report = evaluate(&traces, &records).unwrap();
        assert!((report.overall_accuracy - 0.5).abs() < 1e-12);

        let backend = ScriptedBackend::rules(vec![
            ScriptRule {
                match_all: vec!["q one".into()],
                response: "yes".into(),
            },
            ScriptRule {
                match_all: vec!["q two".into()],
                response: "no".into(),
            },
        ]);
        let config = ModelConfig::default();
        let templates = TemplateSet::embedded();
        let session = ModelSession::new(&backend, &config, &templates);
        rescore_with_judge(&mut report, &records, &session).unwrap();

        assert!(report.llm_judge);
        assert!(
            report
                .rows
                .iter()
                .find(|r| r.record_id == "r1")
                .unwrap()
                .correct
        );
        assert!(
            !report
                .rows
                .iter()
                .find(|r| r.record_id == "r2")
                .unwrap()
                .correct
        );
        assert!((report.overall_accuracy - 0.5).abs() < 1e-12);
        assert!((report.single_hop.unwrap().accuracy - 0.5).abs() < 1e-12);
    }
}
