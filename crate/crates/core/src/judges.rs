//! Judge strategies and the budget-bounded verification loop.
//!
//! A judge ranks traces by suspicion, verifies the top `⌊b·N⌋` with a
//! [`VerificationOracle`], and replaces verified fabrications on
//! Underdetermined queries with an abstention. Everything below the budget
//! keeps its raw label.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signals::SignalVector;
use crate::text;
use crate::trace_model::{
    Category, Corpus, GenerationTrace, Label, QueryRecord, TraceKey, TruthStatus, Verdict,
};
use crate::Execution;

/// Absorbs float error in `fraction * n` before flooring (e.g. `0.29 * 100`).
const BUDGET_EPSILON: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum JudgeError {
    #[error("no traces to rank")]
    EmptyCorpus,
    #[error("the no-judge baseline does not rank traces")]
    NotRankable,
    #[error("invalid budget fraction {0}")]
    BadBudget(f64),
    #[error("no query record for trace {0}")]
    UnknownQuery(TraceKey),
    #[error("no verdict for trace {0}")]
    UnknownTrace(TraceKey),
    #[error("citation index unavailable: {0}")]
    CitationIndexUnavailable(String),
    #[error("invalid strategy: {0}")]
    InvalidStrategy(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StrategyKind {
    NoJudge,
    TextLength,
    TensorEntropy,
    Composed,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 4] = [
        StrategyKind::NoJudge,
        StrategyKind::TextLength,
        StrategyKind::TensorEntropy,
        StrategyKind::Composed,
    ];

    /// Command-line and report name.
    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::NoJudge => "nojudge",
            StrategyKind::TextLength => "text",
            StrategyKind::TensorEntropy => "tensor",
            StrategyKind::Composed => "composed",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| format!("unknown strategy `{s}` (expected nojudge, text, tensor or composed)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum EntropyScore {
    #[default]
    MeanEntropy,
    MaxEntropy,
}

impl EntropyScore {
    pub fn of(self, s: &SignalVector) -> f64 {
        match self {
            EntropyScore::MeanEntropy => s.mean_entropy,
            EntropyScore::MaxEntropy => s.max_entropy,
        }
    }
}

impl FromStr for EntropyScore {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mean" => Ok(EntropyScore::MeanEntropy),
            "max" => Ok(EntropyScore::MaxEntropy),
            other => Err(format!("unknown entropy score `{other}` (expected mean or max)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JudgeStrategy {
    pub kind: StrategyKind,
    pub budget_fraction: f64,
    pub entropy_score: EntropyScore,
    pub citation_router: bool,
}

impl JudgeStrategy {
    pub fn new(kind: StrategyKind, budget_fraction: f64, entropy_score: EntropyScore) -> Result<Self, JudgeError> {
        if !(0.0..=1.0).contains(&budget_fraction) {
            return Err(JudgeError::BadBudget(budget_fraction));
        }
        Ok(JudgeStrategy {
            kind,
            budget_fraction,
            entropy_score,
            citation_router: kind == StrategyKind::Composed,
        })
    }

    pub fn validate(&self) -> Result<(), JudgeError> {
        if !(0.0..=1.0).contains(&self.budget_fraction) {
            return Err(JudgeError::BadBudget(self.budget_fraction));
        }
        if self.kind == StrategyKind::Composed && !self.citation_router {
            return Err(JudgeError::InvalidStrategy("composed judge requires the citation router".into()));
        }
        Ok(())
    }
}

/// One trace's position in a verification ranking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranked {
    pub key: TraceKey,
    pub rank_score: f64,
}

/// Orders descending by score, ties broken by `(query_id, model_id)`.
fn sort_ranking(ranking: &mut [Ranked]) {
    ranking.sort_by(|a, b| b.rank_score.total_cmp(&a.rank_score).then_with(|| a.key.cmp(&b.key)));
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Route {
    EntropyPath,
    CitationLookupPath,
}

pub fn composed_route(query: &QueryRecord) -> Route {
    if query.category == Category::Citation {
        Route::CitationLookupPath
    } else {
        Route::EntropyPath
    }
}

/// Ranks traces from most to least suspect.
///
/// * `TextLength`: longer responses first.
/// * `TensorEntropy`: higher entropy aggregate first.
/// * `Composed`: like `TensorEntropy` except on citation queries, where the
///   ordering is inverted because fabricated references come out with low
///   entropy. Citation scores are mirrored within the citation subset's own
///   range (`min + max - h`) so both paths share a scale.
///
/// `queries` is consulted only by the composed judge.
pub fn rank_for_verification(
    signals: &[SignalVector],
    strategy: &JudgeStrategy,
    queries: &BTreeMap<String, QueryRecord>,
) -> Result<Vec<Ranked>, JudgeError> {
    if signals.is_empty() {
        return Err(JudgeError::EmptyCorpus);
    }
    let score = |s: &SignalVector| strategy.entropy_score.of(s);
    let mut ranking: Vec<Ranked> = match strategy.kind {
        StrategyKind::NoJudge => return Err(JudgeError::NotRankable),
        StrategyKind::TextLength => signals
            .iter()
            .map(|s| Ranked {
                key: s.key.clone(),
                rank_score: s.response_length as f64,
            })
            .collect(),
        StrategyKind::TensorEntropy => signals
            .iter()
            .map(|s| Ranked {
                key: s.key.clone(),
                rank_score: score(s),
            })
            .collect(),
        StrategyKind::Composed => {
            let mut routes = Vec::with_capacity(signals.len());
            for s in signals {
                let q = queries
                    .get(&s.key.query_id)
                    .ok_or_else(|| JudgeError::UnknownQuery(s.key.clone()))?;
                routes.push(composed_route(q));
            }
            let citation_scores = signals
                .iter()
                .zip(&routes)
                .filter(|(_, r)| **r == Route::CitationLookupPath)
                .map(|(s, _)| score(s));
            let (lo, hi) = citation_scores.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), h| {
                (lo.min(h), hi.max(h))
            });
            signals
                .iter()
                .zip(&routes)
                .map(|(s, r)| Ranked {
                    key: s.key.clone(),
                    rank_score: match r {
                        Route::EntropyPath => score(s),
                        Route::CitationLookupPath => lo + hi - score(s),
                    },
                })
                .collect()
        }
    };
    sort_ranking(&mut ranking);
    Ok(ranking)
}

/// What a verifier learned about one trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verification {
    pub label: Label,
    pub truth: TruthStatus,
}

/// A verifier with ground-truth access, as seen by a judge.
///
/// `raw_label` is bookkeeping for traces that are not verified (what the
/// deployed answer would be scored as). `verify` returns `None` when the
/// verification cannot be completed within its cost bound.
pub trait VerificationOracle: Sync {
    fn truth(&self, key: &TraceKey) -> Result<TruthStatus, JudgeError>;
    fn raw_label(&self, key: &TraceKey) -> Result<Label, JudgeError>;
    fn verify(&self, key: &TraceKey) -> Result<Option<Verification>, JudgeError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeOutcome {
    pub query_id: String,
    pub model_id: String,
    pub truth: TruthStatus,
    pub selected_for_verification: bool,
    pub intervened: bool,
    pub final_label: Label,
    pub rank_score: f64,
}

impl JudgeOutcome {
    pub fn key(&self) -> TraceKey {
        TraceKey::new(&self.query_id, &self.model_id)
    }

    pub fn counts_correct(&self) -> bool {
        self.final_label.counts_correct(self.truth)
    }
}

/// Number of traces a budget fraction buys: `⌊fraction · n⌋`.
pub fn budget_count(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64 + BUDGET_EPSILON).floor() as usize).min(n)
}

/// Verifies the top of `ranking` and applies the abstention intervention.
///
/// Outcomes are returned in ranking order.
pub fn apply_budget(
    ranking: &[Ranked],
    budget_fraction: f64,
    oracle: &dyn VerificationOracle,
    exec: Execution,
) -> Result<Vec<JudgeOutcome>, JudgeError> {
    if !(0.0..=1.0).contains(&budget_fraction) {
        return Err(JudgeError::BadBudget(budget_fraction));
    }
    let selected = budget_count(budget_fraction, ranking.len());
    let indexed: Vec<(usize, &Ranked)> = ranking.iter().enumerate().collect();
    exec.try_map(&indexed, |&(i, r)| {
        let raw = oracle.raw_label(&r.key)?;
        let truth = oracle.truth(&r.key)?;
        let is_selected = i < selected;
        let intervene = if is_selected {
            matches!(
                oracle.verify(&r.key)?,
                Some(Verification {
                    label: Label::Incorrect,
                    truth: TruthStatus::Underdetermined
                })
            )
        } else {
            false
        };
        Ok(JudgeOutcome {
            query_id: r.key.query_id.clone(),
            model_id: r.key.model_id.clone(),
            truth,
            selected_for_verification: is_selected,
            intervened: intervene,
            final_label: if intervene { Label::Refusal } else { raw },
            rank_score: r.rank_score,
        })
    })
}

/// Outcomes for the no-judge baseline: every trace keeps its raw label.
pub fn no_judge_outcomes(keys: &[TraceKey], oracle: &dyn VerificationOracle) -> Result<Vec<JudgeOutcome>, JudgeError> {
    keys.iter()
        .map(|k| {
            Ok(JudgeOutcome {
                query_id: k.query_id.clone(),
                model_id: k.model_id.clone(),
                truth: oracle.truth(k)?,
                selected_for_verification: false,
                intervened: false,
                final_label: oracle.raw_label(k)?,
                rank_score: 0.0,
            })
        })
        .collect()
}

/// Oracle backed by evaluator verdicts: verification always succeeds and
/// returns the verdict.
#[derive(Debug, Clone, Default)]
pub struct VerdictOracle {
    entries: HashMap<TraceKey, Verification>,
}

impl VerdictOracle {
    pub fn new(entries: impl IntoIterator<Item = (TraceKey, Verification)>) -> Self {
        VerdictOracle {
            entries: entries.into_iter().collect(),
        }
    }

    pub fn from_verdicts(verdicts: &[Verdict], queries: &BTreeMap<String, QueryRecord>) -> Result<Self, JudgeError> {
        let mut entries = HashMap::new();
        for v in verdicts {
            let q = queries
                .get(&v.query_id)
                .ok_or_else(|| JudgeError::UnknownQuery(v.key()))?;
            entries.insert(
                v.key(),
                Verification {
                    label: v.label,
                    truth: q.truth_status,
                },
            );
        }
        Ok(VerdictOracle { entries })
    }

    fn get(&self, key: &TraceKey) -> Result<Verification, JudgeError> {
        self.entries
            .get(key)
            .copied()
            .ok_or_else(|| JudgeError::UnknownTrace(key.clone()))
    }
}

impl VerificationOracle for VerdictOracle {
    fn truth(&self, key: &TraceKey) -> Result<TruthStatus, JudgeError> {
        Ok(self.get(key)?.truth)
    }

    fn raw_label(&self, key: &TraceKey) -> Result<Label, JudgeError> {
        Ok(self.get(key)?.label)
    }

    fn verify(&self, key: &TraceKey) -> Result<Option<Verification>, JudgeError> {
        self.get(key).map(Some)
    }
}

/// Reference fields pulled out of a response for lookup.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CitationQuery {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub doi: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub authors: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub year: Option<u16>,
}

impl CitationQuery {
    pub fn is_empty(&self) -> bool {
        self.title.is_none() && self.doi.is_none() && self.authors.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CitationRecord {
    pub title: String,
    pub doi: String,
    pub authors: String,
    pub year: Option<u16>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CitationReply {
    pub exists: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub matched_record: Option<CitationRecord>,
}

pub trait CitationIndex: Sync {
    fn lookup(&self, query: &CitationQuery) -> Result<CitationReply, JudgeError>;
}

struct CitationPatterns {
    doi: Regex,
    year: Regex,
    quoted: Regex,
    et_al: Regex,
}

fn citation_patterns() -> &'static CitationPatterns {
    static P: std::sync::OnceLock<CitationPatterns> = std::sync::OnceLock::new();
    P.get_or_init(|| CitationPatterns {
        doi: Regex::new(r#"(?i)\b10\.\d{4,9}/[^\s"<>]+"#).unwrap(),
        year: Regex::new(r"\b(19|20)\d{2}\b").unwrap(),
        quoted: Regex::new("[\"\u{201c}]([^\"\u{201d}]{4,})[\"\u{201d}]").unwrap(),
        et_al: Regex::new(r"\b([A-Z][A-Za-z'\-]+)(?:\s+et\s+al\.?|\s+and\s+[A-Z][A-Za-z'\-]+)").unwrap(),
    })
}

/// Pulls a DOI, a quoted title, a lead-author surname and a year out of
/// free text.
pub fn extract_citation(text: &str) -> CitationQuery {
    let p = citation_patterns();
    CitationQuery {
        doi: p
            .doi
            .find(text)
            .map(|m| m.as_str().trim_end_matches(['.', ',', ';', ')']).to_lowercase()),
        title: p.quoted.captures(text).map(|c| c[1].trim().to_string()),
        authors: p.et_al.captures(text).map(|c| c[1].to_string()),
        year: p.year.find(text).and_then(|m| m.as_str().parse().ok()),
    }
}

/// File-backed index of known references: CSV `title,doi,authors,year`.
///
/// A DOI, when present, must match exactly (case-insensitive). Otherwise the
/// normalized title must match, and the year too when both sides have one.
/// Author-only queries match on the lead surname plus year.
#[derive(Debug, Clone, Default)]
pub struct FileCitationIndex {
    records: Vec<CitationRecord>,
}

impl FileCitationIndex {
    pub fn new(records: Vec<CitationRecord>) -> Self {
        FileCitationIndex { records }
    }

    pub fn parse<R: Read>(reader: R) -> Result<Self, JudgeError> {
        let unavailable = |e: String| JudgeError::CitationIndexUnavailable(e);
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers().map_err(|e| unavailable(e.to_string()))?.clone();
        if headers.iter().collect::<Vec<_>>() != ["title", "doi", "authors", "year"] {
            return Err(unavailable("expected header `title,doi,authors,year`".into()));
        }
        let mut records = Vec::new();
        for row in rdr.records() {
            let row = row.map_err(|e| unavailable(e.to_string()))?;
            records.push(CitationRecord {
                title: row[0].to_string(),
                doi: row[1].trim().to_lowercase(),
                authors: row[2].to_string(),
                year: row[3].trim().parse().ok(),
            });
        }
        Ok(FileCitationIndex { records })
    }

    pub fn load(path: &Path) -> Result<Self, JudgeError> {
        let f = File::open(path)
            .map_err(|e| JudgeError::CitationIndexUnavailable(format!("{}: {e}", path.display())))?;
        Self::parse(f)
    }

    fn matches(rec: &CitationRecord, q: &CitationQuery) -> bool {
        let year_ok = match (q.year, rec.year) {
            (Some(a), Some(b)) => a == b,
            _ => true,
        };
        if let Some(doi) = &q.doi {
            return !rec.doi.is_empty() && rec.doi == doi.to_lowercase();
        }
        if let Some(title) = &q.title {
            return text::normalize(title) == text::normalize(&rec.title) && year_ok;
        }
        if let Some(author) = &q.authors {
            let lead = text::normalize(author);
            let rec_authors = text::tokens(&rec.authors);
            return q.year.is_some() && year_ok && rec_authors.contains(&lead);
        }
        false
    }
}

impl CitationIndex for FileCitationIndex {
    fn lookup(&self, query: &CitationQuery) -> Result<CitationReply, JudgeError> {
        let hit = self.records.iter().find(|r| Self::matches(r, query));
        Ok(CitationReply {
            exists: hit.is_some(),
            matched_record: hit.cloned(),
        })
    }
}

/// Oracle for the composed judge: citation-path traces are verified by
/// reference lookup, everything else by the wrapped oracle.
///
/// A citation trace with no extractable reference cannot be checked by
/// lookup and yields `None`. A reference missing from the index is a
/// fabrication (`Incorrect`); a found one is taken as sound.
pub struct RoutedOracle<'a> {
    pub inner: &'a dyn VerificationOracle,
    pub index: &'a dyn CitationIndex,
    pub citation_texts: HashMap<TraceKey, String>,
}

impl<'a> RoutedOracle<'a> {
    pub fn new(inner: &'a dyn VerificationOracle, index: &'a dyn CitationIndex, corpus: &Corpus) -> Self {
        let citation_texts = corpus
            .traces
            .iter()
            .filter(|t| composed_route(corpus.query_for(t)) == Route::CitationLookupPath)
            .map(|t: &GenerationTrace| (t.key(), t.text.clone()))
            .collect();
        RoutedOracle {
            inner,
            index,
            citation_texts,
        }
    }
}

impl VerificationOracle for RoutedOracle<'_> {
    fn truth(&self, key: &TraceKey) -> Result<TruthStatus, JudgeError> {
        self.inner.truth(key)
    }

    fn raw_label(&self, key: &TraceKey) -> Result<Label, JudgeError> {
        self.inner.raw_label(key)
    }

    fn verify(&self, key: &TraceKey) -> Result<Option<Verification>, JudgeError> {
        let Some(text) = self.citation_texts.get(key) else {
            return self.inner.verify(key);
        };
        let query = extract_citation(text);
        if query.is_empty() {
            return Ok(None);
        }
        let reply = self.index.lookup(&query)?;
        let truth = self.inner.truth(key)?;
        let label = if reply.exists {
            self.inner.raw_label(key)?
        } else {
            Label::Incorrect
        };
        Ok(Some(Verification { label, truth }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sig(qid: &str, len: usize, mean: f64) -> SignalVector {
        SignalVector {
            key: TraceKey::new(qid, "m"),
            mean_entropy: mean,
            max_entropy: mean * 2.0,
            entropy_std: 0.0,
            spike_count: 0,
            response_length: len,
            hedge_flag: false,
            refusal_flag: false,
            topk_entropy_lb_mean: None,
            degenerate: false,
        }
    }

    fn strat(kind: StrategyKind) -> JudgeStrategy {
        JudgeStrategy::new(kind, 0.3, EntropyScore::MeanEntropy).unwrap()
    }

    fn order(r: &[Ranked]) -> Vec<&str> {
        r.iter().map(|x| x.key.query_id.as_str()).collect()
    }

    fn query(id: &str, category: Category, truth: TruthStatus) -> QueryRecord {
        QueryRecord {
            query_id: id.into(),
            text: String::new(),
            category,
            truth_status: truth,
            expected_answers: if truth == TruthStatus::Determined { vec!["x".into()] } else { vec![] },
        }
    }

    #[test]
    fn length_ranking_and_ties() {
        let s = [sig("a", 10, 0.0), sig("b", 50, 0.0), sig("c", 30, 0.0)];
        let r = rank_for_verification(&s, &strat(StrategyKind::TextLength), &BTreeMap::new()).unwrap();
        assert_eq!(order(&r), ["b", "c", "a"]);
        let tied = [sig("b", 5, 0.0), sig("a", 5, 0.0)];
        let r = rank_for_verification(&tied, &strat(StrategyKind::TextLength), &BTreeMap::new()).unwrap();
        assert_eq!(order(&r), ["a", "b"]);
    }

    #[test]
    fn entropy_ranking() {
        let s = [sig("x", 1, 0.13), sig("y", 1, 2.1), sig("z", 1, 1.4)];
        let r = rank_for_verification(&s, &strat(StrategyKind::TensorEntropy), &BTreeMap::new()).unwrap();
        assert_eq!(order(&r), ["y", "z", "x"]);
        let maxed = JudgeStrategy::new(StrategyKind::TensorEntropy, 0.1, EntropyScore::MaxEntropy).unwrap();
        let r = rank_for_verification(&s, &maxed, &BTreeMap::new()).unwrap();
        assert_eq!(r[0].rank_score, 4.2);
    }

    #[test]
    fn ranking_errors() {
        assert_eq!(
            rank_for_verification(&[], &strat(StrategyKind::TextLength), &BTreeMap::new()),
            Err(JudgeError::EmptyCorpus)
        );
        assert_eq!(
            rank_for_verification(&[sig("a", 1, 1.0)], &strat(StrategyKind::NoJudge), &BTreeMap::new()),
            Err(JudgeError::NotRankable)
        );
        assert_eq!(JudgeStrategy::new(StrategyKind::TextLength, 1.5, EntropyScore::MeanEntropy), Err(JudgeError::BadBudget(1.5)));
        let mut bad = strat(StrategyKind::Composed);
        bad.citation_router = false;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn routes() {
        assert_eq!(composed_route(&query("c", Category::Citation, TruthStatus::Underdetermined)), Route::CitationLookupPath);
        assert_eq!(composed_route(&query("k", Category::Control, TruthStatus::Determined)), Route::EntropyPath);
    }

    #[test]
    fn citation_entropy_inverts_under_composed() {
        let queries: BTreeMap<_, _> = [
            query("c_low", Category::Citation, TruthStatus::Underdetermined),
            query("c_high", Category::Citation, TruthStatus::Determined),
            query("k", Category::Control, TruthStatus::Determined),
        ]
        .into_iter()
        .map(|q| (q.query_id.clone(), q))
        .collect();
        let s = [sig("c_low", 1, 0.2), sig("c_high", 1, 1.5), sig("k", 1, 1.0)];
        let r = rank_for_verification(&s, &strat(StrategyKind::Composed), &queries).unwrap();
        let pos = |id: &str| r.iter().position(|x| x.key.query_id == id).unwrap();
        assert!(pos("c_low") < pos("c_high"));
        let score = |id: &str| r.iter().find(|x| x.key.query_id == id).unwrap().rank_score;
        assert!((score("c_low") - 1.5).abs() < 1e-12);
        assert!((score("c_high") - 0.2).abs() < 1e-12);
        assert_eq!(score("k"), 1.0);
    }

    #[test]
    fn budget_counts_floor() {
        assert_eq!(budget_count(0.1, 800), 80);
        assert_eq!(budget_count(0.2, 800), 160);
        assert_eq!(budget_count(0.3, 800), 240);
        assert_eq!(budget_count(0.29, 100), 29);
        assert_eq!(budget_count(0.15, 10), 1);
        assert_eq!(budget_count(0.0, 10), 0);
        assert_eq!(budget_count(1.0, 10), 10);
    }

    /// Ten traces: 4 knowable (3 correct, 1 wrong) and 6 unknowable
    /// (2 abstained, 4 fabricated).
    fn fixture() -> (Vec<Ranked>, VerdictOracle) {
        use Label::*;
        use TruthStatus::*;
        let rows = [
            ("k1", Determined, Correct),
            ("k2", Determined, Correct),
            ("k3", Determined, Correct),
            ("k4", Determined, Incorrect),
            ("u1", Underdetermined, Refusal),
            ("u2", Underdetermined, Refusal),
            ("u3", Underdetermined, Incorrect),
            ("u4", Underdetermined, Incorrect),
            ("u5", Underdetermined, Incorrect),
            ("u6", Underdetermined, Incorrect),
        ];
        let oracle = VerdictOracle::new(
            rows.iter()
                .map(|(id, truth, label)| (TraceKey::new(*id, "m"), Verification { label: *label, truth: *truth })),
        );
        let mut ranking: Vec<Ranked> = rows
            .iter()
            .enumerate()
            .map(|(i, (id, _, _))| Ranked { key: TraceKey::new(*id, "m"), rank_score: i as f64 })
            .collect();
        sort_ranking(&mut ranking);
        (ranking, oracle)
    }

    fn acc(outcomes: &[JudgeOutcome]) -> f64 {
        outcomes.iter().filter(|o| o.counts_correct()).count() as f64 / outcomes.len() as f64
    }

    #[test]
    fn zero_budget_is_baseline() {
        let (ranking, oracle) = fixture();
        let out = apply_budget(&ranking, 0.0, &oracle, Execution::Sequential).unwrap();
        assert!(out.iter().all(|o| !o.selected_for_verification && !o.intervened));
        let keys: Vec<TraceKey> = ranking.iter().map(|r| r.key.clone()).collect();
        assert_eq!(acc(&out), acc(&no_judge_outcomes(&keys, &oracle).unwrap()));
        // 3 knowable correct + 2 abstentions
        assert_eq!(acc(&out), 0.5);
    }

    #[test]
    fn full_budget_perfect_oracle() {
        let (ranking, oracle) = fixture();
        let out = apply_budget(&ranking, 1.0, &oracle, Execution::Parallel).unwrap();
        // (#correct knowable + #unknowable) / N, enumerated by hand: (3 + 6) / 10
        assert_eq!(acc(&out), 0.9);
        assert_eq!(out.iter().filter(|o| o.intervened).count(), 4);
        assert!(out.iter().all(|o| !o.intervened || o.selected_for_verification));
        // the wrong knowable answer is verified but not rescued
        let k4 = out.iter().find(|o| o.query_id == "k4").unwrap();
        assert!(k4.selected_for_verification && !k4.intervened);
        assert_eq!(k4.final_label, Label::Incorrect);
    }

    #[test]
    fn selection_is_prefix_of_ranking() {
        let (ranking, oracle) = fixture();
        let out = apply_budget(&ranking, 0.3, &oracle, Execution::Sequential).unwrap();
        let sel: Vec<&str> = out.iter().filter(|o| o.selected_for_verification).map(|o| o.query_id.as_str()).collect();
        assert_eq!(sel, ["u6", "u5", "u4"]);
        assert_eq!(acc(&out), 0.8);
    }

    #[test]
    fn eight_hundred_at_ten_percent() {
        let oracle = VerdictOracle::new((0..800).map(|i| {
            (
                TraceKey::new(format!("q{i:03}"), "m"),
                Verification { label: Label::Correct, truth: TruthStatus::Determined },
            )
        }));
        let ranking: Vec<Ranked> = (0..800)
            .map(|i| Ranked { key: TraceKey::new(format!("q{i:03}"), "m"), rank_score: 0.0 })
            .collect();
        let out = apply_budget(&ranking, 0.1, &oracle, Execution::Parallel).unwrap();
        assert_eq!(out.iter().filter(|o| o.selected_for_verification).count(), 80);
    }

    #[test]
    fn citation_extraction_and_lookup() {
        let q = extract_citation("See Smith et al. (2019), \"Deep Nets for Cats\", doi:10.1234/abcd.5678.");
        assert_eq!(q.doi.as_deref(), Some("10.1234/abcd.5678"));
        assert_eq!(q.title.as_deref(), Some("Deep Nets for Cats"));
        assert_eq!(q.authors.as_deref(), Some("Smith"));
        assert_eq!(q.year, Some(2019));

        let csv = "title,doi,authors,year\nDeep Nets for Cats,10.1234/ABCD.5678,Smith; Jones,2019\nOn Wombats,,Brown,2001\n";
        let idx = FileCitationIndex::parse(csv.as_bytes()).unwrap();
        assert!(idx.lookup(&q).unwrap().exists);
        let by_title = CitationQuery { title: Some("on  WOMBATS".into()), year: Some(2001), ..Default::default() };
        assert!(idx.lookup(&by_title).unwrap().exists);
        let wrong_year = CitationQuery { year: Some(2002), ..by_title.clone() };
        assert!(!idx.lookup(&wrong_year).unwrap().exists);
        let fake = extract_citation("Yamamoto et al. (2021) showed mitochondrial decay slows.");
        assert!(!idx.lookup(&fake).unwrap().exists);
        assert!(FileCitationIndex::parse("a,b\n".as_bytes()).is_err());
    }
}
