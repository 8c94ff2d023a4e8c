//! Canonical data model for queries, generation traces and verdicts, plus
//! the on-disk formats they are ingested from.
//!
//! * Queries CSV: `query_id,text,category,truth_status,expected_answers`,
//!   with `expected_answers` a quoted `|`-separated list.
//! * Trace JSONL: a header line `{"schema":"trace/1","vocab_size_bound":N}`
//!   followed by one trace object per line.
//!
//! Both formats have canonical writers; loading a canonical file and writing
//! it back reproduces it byte for byte.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Schema tag accepted in the trace header.
pub const TRACE_SCHEMA: &str = "trace/1";
pub const QUERIES_HEADER: &str = "query_id,text,category,truth_status,expected_answers";

const ENTROPY_SLACK: f64 = 1e-9;
const TOPK_MASS_SLACK: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum TraceModelError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("duplicate query_id `{0}`")]
    DuplicateId(String),
    #[error("duplicate trace for query `{query_id}` model `{model_id}`")]
    DuplicateTrace { query_id: String, model_id: String },
    #[error("invariant violation at line {line}: {reason}")]
    InvariantViolation { line: usize, reason: String },
    #[error("unsupported trace schema `{0}` (expected `trace/1`)")]
    SchemaVersionUnsupported(String),
    #[error("trace `{query_id}`: tokens and token_entropies differ in length")]
    LengthMismatch { query_id: String },
    #[error("trace `{query_id}`: entropy at index {index} out of range")]
    EntropyOutOfRange { query_id: String, index: usize },
    #[error("trace `{query_id}`: top-k entry at token {index} invalid: {reason}")]
    TopKInvalid {
        query_id: String,
        index: usize,
        reason: String,
    },
    #[error("trace `{query_id}`: attention block shape does not match data length")]
    AttentionShape { query_id: String },
    #[error("trace for query `{query_id}` has no matching query record")]
    DanglingTrace { query_id: String },
}

pub type Result<T> = std::result::Result<T, TraceModelError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    Control,
    Wombat,
    Glavinsky,
    Westphalia,
    PrivateFuture,
    Citation,
}

impl Category {
    pub const ALL: [Category; 6] = [
        Category::Control,
        Category::Wombat,
        Category::Glavinsky,
        Category::Westphalia,
        Category::PrivateFuture,
        Category::Citation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Control => "Control",
            Category::Wombat => "Wombat",
            Category::Glavinsky => "Glavinsky",
            Category::Westphalia => "Westphalia",
            Category::PrivateFuture => "PrivateFuture",
            Category::Citation => "Citation",
        }
    }

    /// Truth status forced by the category, if any. Citation queries may be
    /// either (real or fabricated references).
    pub fn required_truth(self) -> Option<TruthStatus> {
        match self {
            Category::Control | Category::Wombat => Some(TruthStatus::Determined),
            Category::Glavinsky | Category::Westphalia | Category::PrivateFuture => {
                Some(TruthStatus::Underdetermined)
            }
            Category::Citation => None,
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown category `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TruthStatus {
    Determined,
    Underdetermined,
}

impl TruthStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            TruthStatus::Determined => "Determined",
            TruthStatus::Underdetermined => "Underdetermined",
        }
    }
}

impl fmt::Display for TruthStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TruthStatus {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            x if x.eq_ignore_ascii_case("Determined") => Ok(TruthStatus::Determined),
            x if x.eq_ignore_ascii_case("Underdetermined") => Ok(TruthStatus::Underdetermined),
            other => Err(format!("unknown truth_status `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryRecord {
    pub query_id: String,
    pub text: String,
    pub category: Category,
    pub truth_status: TruthStatus,
    pub expected_answers: Vec<String>,
}

impl QueryRecord {
    /// Checks the category/truth-status and answer-list invariants.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.query_id.trim().is_empty() {
            return Err("empty query_id".into());
        }
        if let Some(required) = self.category.required_truth() {
            if required != self.truth_status {
                return Err(format!(
                    "category {} requires truth_status {}, got {}",
                    self.category, required, self.truth_status
                ));
            }
        }
        if self.truth_status == TruthStatus::Determined && self.expected_answers.is_empty() {
            return Err("Determined query without expected answers".into());
        }
        Ok(())
    }
}

/// Identity of one trace: a query answered by a model.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TraceKey {
    pub query_id: String,
    pub model_id: String,
}

impl TraceKey {
    pub fn new(query_id: impl Into<String>, model_id: impl Into<String>) -> Self {
        TraceKey {
            query_id: query_id.into(),
            model_id: model_id.into(),
        }
    }
}

impl fmt::Display for TraceKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.query_id, self.model_id)
    }
}

/// Flattened per-head attention vectors: `shape = [n_heads_total, dim]`,
/// `data` row-major with `n_heads_total * dim` entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttentionBlock {
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

impl AttentionBlock {
    pub fn is_consistent(&self) -> bool {
        self.shape[0]
            .checked_mul(self.shape[1])
            .is_some_and(|n| n == self.data.len())
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.shape[1].max(1)).take(self.shape[0])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationTrace {
    pub query_id: String,
    pub model_id: String,
    pub text: String,
    pub tokens: Vec<String>,
    pub token_entropies: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topk_logprobs: Option<Vec<Vec<(String, f64)>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attention_summary: Option<AttentionBlock>,
    pub is_abstention: bool,
}

impl GenerationTrace {
    pub fn key(&self) -> TraceKey {
        TraceKey::new(&self.query_id, &self.model_id)
    }

    /// Validates lengths, entropy range and top-k shape against the file's
    /// declared vocabulary bound.
    pub fn validate(&self, vocab_size_bound: u64) -> Result<()> {
        let qid = || self.query_id.clone();
        if self.tokens.len() != self.token_entropies.len() {
            return Err(TraceModelError::LengthMismatch { query_id: qid() });
        }
        let max_entropy = (vocab_size_bound.max(1) as f64).ln() + ENTROPY_SLACK;
        for (index, &h) in self.token_entropies.iter().enumerate() {
            if !h.is_finite() || h < 0.0 || h > max_entropy {
                return Err(TraceModelError::EntropyOutOfRange {
                    query_id: qid(),
                    index,
                });
            }
        }
        if let Some(topk) = &self.topk_logprobs {
            if topk.len() != self.tokens.len() {
                return Err(TraceModelError::TopKInvalid {
                    query_id: qid(),
                    index: topk.len().min(self.tokens.len()),
                    reason: "top-k list length differs from token count".into(),
                });
            }
            for (index, entries) in topk.iter().enumerate() {
                let bad = |reason: &str| TraceModelError::TopKInvalid {
                    query_id: qid(),
                    index,
                    reason: reason.into(),
                };
                if entries.iter().any(|(_, lp)| !lp.is_finite() || *lp > 0.0) {
                    return Err(bad("logprob must be finite and <= 0"));
                }
                if entries.windows(2).any(|w| w[0].1 < w[1].1) {
                    return Err(bad("logprobs not sorted descending"));
                }
                let mass: f64 = entries.iter().map(|(_, lp)| lp.exp()).sum();
                if mass > 1.0 + TOPK_MASS_SLACK {
                    return Err(bad("probability mass exceeds 1"));
                }
            }
        }
        if let Some(att) = &self.attention_summary {
            if !att.is_consistent() {
                return Err(TraceModelError::AttentionShape { query_id: qid() });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Correct,
    Incorrect,
    Refusal,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Correct => "Correct",
            Label::Incorrect => "Incorrect",
            Label::Refusal => "Refusal",
        }
    }

    /// Whether this label counts toward accuracy for a query of `truth`:
    /// answering correctly when Determined, abstaining when Underdetermined.
    pub fn counts_correct(self, truth: TruthStatus) -> bool {
        matches!(
            (truth, self),
            (TruthStatus::Determined, Label::Correct) | (TruthStatus::Underdetermined, Label::Refusal)
        )
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "correct" => Ok(Label::Correct),
            "incorrect" => Ok(Label::Incorrect),
            "refusal" => Ok(Label::Refusal),
            other => Err(format!("unknown label `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Tier {
    Programmatic,
    Classifier,
    Human,
}

impl Tier {
    pub fn as_str(self) -> &'static str {
        match self {
            Tier::Programmatic => "Programmatic",
            Tier::Classifier => "Classifier",
            Tier::Human => "Human",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub query_id: String,
    pub model_id: String,
    pub label: Label,
    pub tier: Tier,
    pub rationale: String,
}

impl Verdict {
    pub fn key(&self) -> TraceKey {
        TraceKey::new(&self.query_id, &self.model_id)
    }
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|source| TraceModelError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_queries(path: &Path) -> Result<Vec<QueryRecord>> {
    parse_queries(open(path)?)
}

/// Parses and validates a queries CSV.
pub fn parse_queries<R: Read>(reader: R) -> Result<Vec<QueryRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let headers = rdr.headers().map_err(|e| TraceModelError::Parse {
        line: 1,
        reason: e.to_string(),
    })?;
    if headers.iter().collect::<Vec<_>>().join(",") != QUERIES_HEADER {
        return Err(TraceModelError::Parse {
            line: 1,
            reason: format!("expected header `{QUERIES_HEADER}`"),
        });
    }
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| TraceModelError::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            reason: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let parse_err = |reason: String| TraceModelError::Parse { line, reason };
        let category: Category = row[2].parse().map_err(parse_err)?;
        let truth_status: TruthStatus = row[3].parse().map_err(parse_err)?;
        let expected_answers: Vec<String> = row[4]
            .split('|')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(String::from)
            .collect();
        let rec = QueryRecord {
            query_id: row[0].to_string(),
            text: row[1].to_string(),
            category,
            truth_status,
            expected_answers,
        };
        rec.validate()
            .map_err(|reason| TraceModelError::InvariantViolation { line, reason })?;
        if !seen.insert(rec.query_id.clone()) {
            return Err(TraceModelError::DuplicateId(rec.query_id));
        }
        out.push(rec);
    }
    Ok(out)
}

fn csv_field(s: &str, force_quote: bool) -> String {
    let needs = force_quote
        || s.is_empty()
        || s.contains([',', '"', '\n', '\r'])
        || s.starts_with(' ')
        || s.ends_with(' ');
    if needs {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Writes queries in canonical form (`\n` line endings, answers always quoted).
pub fn write_queries<W: Write>(mut w: W, queries: &[QueryRecord]) -> io::Result<()> {
    writeln!(w, "{QUERIES_HEADER}")?;
    for q in queries {
        writeln!(
            w,
            "{},{},{},{},{}",
            csv_field(&q.query_id, false),
            csv_field(&q.text, false),
            q.category,
            q.truth_status,
            csv_field(&q.expected_answers.join("|"), true)
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceHeader {
    pub schema: String,
    pub vocab_size_bound: u64,
}

/// A loaded trace file.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSet {
    pub vocab_size_bound: u64,
    pub traces: Vec<GenerationTrace>,
}

pub fn load_traces(path: &Path) -> Result<TraceSet> {
    parse_traces(BufReader::new(open(path)?))
}

/// Parses and validates trace JSONL. Blank lines are skipped.
pub fn parse_traces<R: BufRead>(reader: R) -> Result<TraceSet> {
    let mut lines = reader.lines().enumerate();
    let header: TraceHeader = loop {
        match lines.next() {
            None => {
                return Err(TraceModelError::Parse {
                    line: 1,
                    reason: "missing header line".into(),
                })
            }
            Some((i, line)) => {
                let line = line.map_err(|e| TraceModelError::Parse {
                    line: i + 1,
                    reason: e.to_string(),
                })?;
                if line.trim().is_empty() {
                    continue;
                }
                let v: serde_json::Value =
                    serde_json::from_str(&line).map_err(|e| TraceModelError::Parse {
                        line: i + 1,
                        reason: e.to_string(),
                    })?;
                if let Some(schema) = v.get("schema").and_then(|s| s.as_str()) {
                    if schema != TRACE_SCHEMA {
                        return Err(TraceModelError::SchemaVersionUnsupported(schema.into()));
                    }
                }
                break serde_json::from_value(v).map_err(|e| TraceModelError::Parse {
                    line: i + 1,
                    reason: format!("bad header: {e}"),
                })?;
            }
        }
    };
    let mut seen = BTreeSet::new();
    let mut traces = Vec::new();
    for (i, line) in lines {
        let line = line.map_err(|e| TraceModelError::Parse {
            line: i + 1,
            reason: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let trace: GenerationTrace =
            serde_json::from_str(&line).map_err(|e| TraceModelError::Parse {
                line: i + 1,
                reason: e.to_string(),
            })?;
        trace.validate(header.vocab_size_bound)?;
        if !seen.insert(trace.key()) {
            return Err(TraceModelError::DuplicateTrace {
                query_id: trace.query_id,
                model_id: trace.model_id,
            });
        }
        traces.push(trace);
    }
    Ok(TraceSet {
        vocab_size_bound: header.vocab_size_bound,
        traces,
    })
}

/// Writes a trace set in canonical JSONL form.
pub fn write_traces<W: Write>(mut w: W, set: &TraceSet) -> io::Result<()> {
    let header = TraceHeader {
        schema: TRACE_SCHEMA.into(),
        vocab_size_bound: set.vocab_size_bound,
    };
    writeln!(w, "{}", serde_json::to_string(&header)?)?;
    for t in &set.traces {
        writeln!(w, "{}", serde_json::to_string(t)?)?;
    }
    Ok(())
}

/// Queries and traces joined by `query_id`, traces sorted by key.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub queries: BTreeMap<String, QueryRecord>,
    pub traces: Vec<GenerationTrace>,
    pub vocab_size_bound: u64,
}

impl Corpus {
    /// Joins traces to queries. In strict mode a trace without a query is an
    /// error; otherwise it is dropped with a warning.
    pub fn join(queries: Vec<QueryRecord>, set: TraceSet, strict: bool) -> Result<Corpus> {
        let mut index = BTreeMap::new();
        for q in queries {
            if index.contains_key(&q.query_id) {
                return Err(TraceModelError::DuplicateId(q.query_id));
            }
            index.insert(q.query_id.clone(), q);
        }
        let mut traces = Vec::with_capacity(set.traces.len());
        for t in set.traces {
            if index.contains_key(&t.query_id) {
                traces.push(t);
            } else if strict {
                return Err(TraceModelError::DanglingTrace {
                    query_id: t.query_id,
                });
            } else {
                log::warn!("dropping dangling trace {}", t.key());
            }
        }
        traces.sort_by_key(|t| t.key());
        Ok(Corpus {
            queries: index,
            traces,
            vocab_size_bound: set.vocab_size_bound,
        })
    }

    pub fn query_for(&self, trace: &GenerationTrace) -> &QueryRecord {
        &self.queries[&trace.query_id]
    }

    pub fn model_ids(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.traces.iter().map(|t| t.model_id.as_str()).collect();
        set.into_iter().map(String::from).collect()
    }
}
