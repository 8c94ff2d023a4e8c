//! Replays externally released per-query result tables (`exp27_*.csv`).
//!
//! The exact column layout of those files is not fixed here; headers are
//! matched case-insensitively against a few common spellings. Each row needs
//! a query id, a model id, a knowable flag or truth status, an outcome label,
//! a mean entropy and a response length. A category column is optional.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::judges::{EntropyScore, StrategyKind, Verification, VerdictOracle, VerificationOracle};
use crate::metrics::{auc, cost_surface, CostSurface, MetricsError};
use crate::signals::SignalVector;
use crate::trace_model::{Category, Label, QueryRecord, TraceKey, TruthStatus};
use crate::Execution;

#[derive(Debug, Error)]
pub enum ReleasedError {
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReleasedRow {
    pub query_id: String,
    pub model_id: String,
    pub truth: TruthStatus,
    pub label: Label,
    pub mean_entropy: f64,
    pub response_length: usize,
    pub category: Option<Category>,
}

const QUERY: &[&str] = &["query_id", "qid", "query"];
const MODEL: &[&str] = &["model_id", "model"];
const KNOWABLE: &[&str] = &["knowable", "is_knowable", "truth_status", "ground_truth"];
const LABEL: &[&str] = &["label", "outcome", "verdict", "eval_label"];
const ENTROPY: &[&str] = &["mean_entropy", "entropy", "avg_entropy"];
const LENGTH: &[&str] = &["response_length", "length", "n_tokens", "num_tokens"];
const CATEGORY: &[&str] = &["category"];

/// Files matching `exp27_*.csv` in `dir`, sorted by name.
pub fn released_files(dir: &Path) -> Vec<PathBuf> {
    let Ok(entries) = fs::read_dir(dir) else { return Vec::new() };
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("exp27_") && n.ends_with(".csv"))
        })
        .collect();
    files.sort();
    files
}

fn parse_truth(s: &str) -> Option<TruthStatus> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "knowable" | "determined" => Some(TruthStatus::Determined),
        "0" | "false" | "no" | "unknowable" | "underdetermined" => Some(TruthStatus::Underdetermined),
        _ => None,
    }
}

fn parse_label(s: &str) -> Option<Label> {
    match s.trim().to_ascii_lowercase().as_str() {
        "correct" => Some(Label::Correct),
        "incorrect" | "hallucination" | "fabrication" | "wrong" => Some(Label::Incorrect),
        "refusal" | "abstain" | "abstention" | "refused" => Some(Label::Refusal),
        _ => None,
    }
}

pub fn load_released_file(path: &Path) -> Result<Vec<ReleasedRow>, ReleasedError> {
    let fmt = |reason: String| ReleasedError::Format { path: path.to_path_buf(), reason };
    let mut rdr = csv::Reader::from_path(path).map_err(|e| fmt(e.to_string()))?;
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| fmt(e.to_string()))?
        .iter()
        .map(|h| h.trim().to_ascii_lowercase())
        .collect();
    let col = |names: &[&str]| headers.iter().position(|h| names.contains(&h.as_str()));
    let need = |names: &[&str]| col(names).ok_or_else(|| fmt(format!("no column among {names:?}")));
    let (qc, mc, kc, lc, ec, nc) = (need(QUERY)?, need(MODEL)?, need(KNOWABLE)?, need(LABEL)?, need(ENTROPY)?, need(LENGTH)?);
    let cc = col(CATEGORY);
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| fmt(e.to_string()))?;
        let field = |c: usize| rec.get(c).unwrap_or("");
        let bad = |what: &str| fmt(format!("row {}: bad {what}", i + 2));
        rows.push(ReleasedRow {
            query_id: field(qc).to_string(),
            model_id: field(mc).to_string(),
            truth: parse_truth(field(kc)).ok_or_else(|| bad("knowable flag"))?,
            label: parse_label(field(lc)).ok_or_else(|| bad("label"))?,
            mean_entropy: field(ec).trim().parse().map_err(|_| bad("entropy"))?,
            response_length: field(nc)
                .trim()
                .parse::<f64>()
                .map(|v| v.round() as usize)
                .map_err(|_| bad("length"))?,
            category: cc.and_then(|c| field(c).parse().ok()),
        });
    }
    Ok(rows)
}

/// All released rows under `dir`, or `None` when no files are present.
pub fn load_released_dir(dir: &Path) -> Result<Option<Vec<ReleasedRow>>, ReleasedError> {
    let files = released_files(dir);
    if files.is_empty() {
        return Ok(None);
    }
    let mut rows = Vec::new();
    for f in files {
        rows.extend(load_released_file(&f)?);
    }
    Ok(Some(rows))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReleasedReplay {
    pub surface: CostSurface,
    pub pooled_entropy_auc: f64,
}

/// Rebuilds the cost surface and pooled mean-entropy AUC from released rows.
pub fn replay_released(rows: &[ReleasedRow], budgets: &[f64], exec: Execution) -> Result<ReleasedReplay, ReleasedError> {
    let mut queries = BTreeMap::new();
    let mut signals = Vec::with_capacity(rows.len());
    let mut entries = Vec::with_capacity(rows.len());
    for r in rows {
        let category = r.category.unwrap_or(match r.truth {
            TruthStatus::Determined => Category::Control,
            TruthStatus::Underdetermined => Category::Westphalia,
        });
        queries.entry(r.query_id.clone()).or_insert_with(|| QueryRecord {
            query_id: r.query_id.clone(),
            text: String::new(),
            category,
            truth_status: r.truth,
            expected_answers: Vec::new(),
        });
        let key = TraceKey::new(&r.query_id, &r.model_id);
        entries.push((key.clone(), Verification { label: r.label, truth: r.truth }));
        signals.push(SignalVector {
            key,
            mean_entropy: r.mean_entropy,
            max_entropy: r.mean_entropy,
            entropy_std: 0.0,
            spike_count: 0,
            response_length: r.response_length,
            hedge_flag: false,
            refusal_flag: r.label == Label::Refusal,
            topk_entropy_lb_mean: None,
            degenerate: false,
        });
    }
    signals.sort_by(|a, b| a.key.cmp(&b.key));
    let oracle = VerdictOracle::new(entries);
    let pick = |_: StrategyKind| &oracle as &dyn VerificationOracle;
    let surface = cost_surface(
        &signals,
        &queries,
        &StrategyKind::ALL,
        budgets,
        EntropyScore::MeanEntropy,
        &pick,
        exec,
    )?;
    let scored: Vec<(f64, bool)> = rows
        .iter()
        .map(|r| (r.mean_entropy, r.truth == TruthStatus::Underdetermined))
        .collect();
    Ok(ReleasedReplay {
        surface,
        pooled_entropy_auc: auc(&scored)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_flexible_headers() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_released_dir(dir.path()).unwrap().is_none());
        fs::write(
            dir.path().join("exp27_local.csv"),
            "Query_ID,Model,Knowable,Label,Mean_Entropy,Length\n\
             a,m1,1,correct,0.5,10\n\
             b,m1,0,hallucination,1.5,30\n\
             c,m1,false,refusal,1.0,4\n",
        )
        .unwrap();
        fs::write(dir.path().join("notes.csv"), "x\n1\n").unwrap();
        let rows = load_released_dir(dir.path()).unwrap().unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[1].label, Label::Incorrect);
        assert_eq!(rows[2].truth, TruthStatus::Underdetermined);
        let replay = replay_released(&rows, &[0.1, 0.5], Execution::Sequential).unwrap();
        assert_eq!(replay.pooled_entropy_auc, 1.0);
        assert!((replay.surface.baseline_accuracy - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(replay.surface.get(StrategyKind::TensorEntropy, 0.5), Some(1.0));
    }

    #[test]
    fn missing_column_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("exp27_x.csv");
        fs::write(&p, "query_id,model_id\na,b\n").unwrap();
        assert!(matches!(load_released_file(&p), Err(ReleasedError::Format { .. })));
    }
}
