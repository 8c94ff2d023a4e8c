//! End-to-end commands: `run`, `simulate` and `tda`.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluator::{
    load_calibration_sample, parse_irregulars, tier3_calibrate, verdict_csv_row, ClassifierClient, EvalError,
    Evaluator, ReplayClient, Tier1Config, NEGATION_WINDOW, VERDICTS_CSV_HEADER,
};
use crate::formal_sim::scenario::{run_scenario, PropertiesReport, Scenario, DEFAULT_SCENARIO};
use crate::formal_sim::FormalError;
use crate::judges::{
    CitationIndex, EntropyScore, FileCitationIndex, JudgeError, RoutedOracle, StrategyKind, VerdictOracle,
    VerificationOracle,
};
use crate::metrics::{
    auc_report, auc_report_csv, cost_surface, spearman_matrix, spearman_matrix_csv, CostSurface, MetricsError,
};
use crate::signals::{extract_all, SignalVector, TextPatterns};
use crate::tda::{coherence, fragmentation, rips_persistence, PointCloud, TdaError};
use crate::text::PatternList;
use crate::trace_model::{load_queries, load_traces, Corpus, TraceModelError};
use crate::Execution;

/// Default in-flight classifier requests.
pub const DEFAULT_WINDOW: usize = 8;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Input(#[from] TraceModelError),
    #[error("pattern file {path}: {source}")]
    PatternFile { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Judge(#[from] JudgeError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Formal(#[from] FormalError),
    #[error("trace {key}: {source}")]
    Tda { key: String, source: TdaError },
    #[error("{path}: {source}")]
    Output { path: PathBuf, source: io::Error },
}

impl PipelineError {
    /// 2 for bad input or configuration, 3 for classifier failures, 1 for
    /// anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_)
            | PipelineError::Input(_)
            | PipelineError::PatternFile { .. }
            | PipelineError::Formal(FormalError::Scenario(_)) => 2,
            PipelineError::Eval(
                EvalError::ClientUnavailable(_) | EvalError::UnparseableClassifierOutput { .. } | EvalError::TranscriptFile(_),
            ) => 3,
            PipelineError::Eval(EvalError::CalibrationFile(_) | EvalError::MisalignedSamples(_)) => 2,
            PipelineError::Judge(JudgeError::CitationIndexUnavailable(_)) => 3,
            PipelineError::Judge(JudgeError::BadBudget(_) | JudgeError::InvalidStrategy(_)) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClassifierMode {
    Replay(PathBuf),
    Live(String),
}

impl FromStr for ClassifierMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(p) = s.strip_prefix("replay:") {
            Ok(ClassifierMode::Replay(PathBuf::from(p)))
        } else if let Some(u) = s.strip_prefix("live:") {
            Ok(ClassifierMode::Live(u.to_string()))
        } else {
            Err(format!("expected replay:<path> or live:<url>, got `{s}`"))
        }
    }
}

/// Optional replacements for the bundled pattern lists.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternPaths {
    pub hedges: Option<PathBuf>,
    pub refusals: Option<PathBuf>,
    pub negations: Option<PathBuf>,
    pub irregulars: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub queries_path: PathBuf,
    pub traces_path: PathBuf,
    pub output_dir: PathBuf,
    pub strategies: Vec<StrategyKind>,
    pub budgets: Vec<f64>,
    pub entropy_score: EntropyScore,
    pub patterns: PatternPaths,
    pub classifier: Option<ClassifierMode>,
    pub citation_index: Option<PathBuf>,
    pub calibration: Option<PathBuf>,
    pub seed: u64,
    pub window: usize,
    pub validate_only: bool,
}

impl RunConfig {
    pub fn new(queries_path: PathBuf, traces_path: PathBuf, output_dir: PathBuf) -> Self {
        RunConfig {
            queries_path,
            traces_path,
            output_dir,
            strategies: StrategyKind::ALL.to_vec(),
            budgets: vec![0.1, 0.2, 0.3],
            entropy_score: EntropyScore::MeanEntropy,
            patterns: PatternPaths::default(),
            classifier: None,
            citation_index: None,
            calibration: None,
            seed: 0,
            window: DEFAULT_WINDOW,
            validate_only: false,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.strategies.is_empty() {
            return Err(PipelineError::Config("no strategies given".into()));
        }
        if self.budgets.is_empty() {
            return Err(PipelineError::Config("no budgets given".into()));
        }
        if let Some(b) = self.budgets.iter().find(|b| !(0.0..=1.0).contains(*b)) {
            return Err(PipelineError::Config(format!("budget {b} outside [0, 1]")));
        }
        if self.budgets.windows(2).any(|w| w[0] >= w[1]) {
            return Err(PipelineError::Config("budgets must be strictly ascending".into()));
        }
        if self.window == 0 {
            return Err(PipelineError::Config("classifier window must be at least 1".into()));
        }
        Ok(())
    }
}

fn load_patterns(path: &Option<PathBuf>, default: &str) -> Result<PatternList, PipelineError> {
    match path {
        None => Ok(PatternList::parse(default)),
        Some(p) => PatternList::load(p).map_err(|source| PipelineError::PatternFile { path: p.clone(), source }),
    }
}

fn build_evaluator(cfg: &RunConfig) -> Result<Evaluator, PipelineError> {
    use crate::text::{DEFAULT_HEDGES, DEFAULT_IRREGULARS, DEFAULT_NEGATIONS, DEFAULT_REFUSALS};
    let irregulars = match &cfg.patterns.irregulars {
        None => parse_irregulars(DEFAULT_IRREGULARS),
        Some(p) => parse_irregulars(
            &fs::read_to_string(p).map_err(|source| PipelineError::PatternFile { path: p.clone(), source })?,
        ),
    };
    Ok(Evaluator::new(
        Tier1Config {
            negations: load_patterns(&cfg.patterns.negations, DEFAULT_NEGATIONS)?,
            irregulars,
            window: NEGATION_WINDOW,
        },
        TextPatterns {
            hedges: load_patterns(&cfg.patterns.hedges, DEFAULT_HEDGES)?,
            refusals: load_patterns(&cfg.patterns.refusals, DEFAULT_REFUSALS)?,
        },
        cfg.window,
    ))
}

/// Loads and validates both inputs.
pub fn load_corpus(cfg: &RunConfig) -> Result<Corpus, PipelineError> {
    let queries = load_queries(&cfg.queries_path)?;
    let traces = load_traces(&cfg.traces_path)?;
    Ok(Corpus::join(queries, traces, true)?)
}

fn make_client(mode: &Option<ClassifierMode>) -> Result<Box<dyn ClassifierClient>, PipelineError> {
    match mode {
        None => Ok(Box::new(ReplayClient::default())),
        Some(ClassifierMode::Replay(p)) => Ok(Box::new(ReplayClient::load(p)?)),
        #[cfg(feature = "live-classifier")]
        Some(ClassifierMode::Live(url)) => Ok(Box::new(crate::evaluator::HttpClassifierClient {
            url: url.clone(),
            timeout: std::time::Duration::from_secs(60),
        })),
        #[cfg(not(feature = "live-classifier"))]
        Some(ClassifierMode::Live(_)) => Err(PipelineError::Config(
            "live classifier support is not compiled in (enable the live-classifier feature)".into(),
        )),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub n_queries: usize,
    pub n_traces: usize,
    pub models: Vec<String>,
    pub surface: Option<CostSurface>,
    pub files: Vec<PathBuf>,
}

/// Writes every file or none: on failure, files already written are
/// removed.
fn write_all(dir: &Path, files: &[(&str, String)]) -> Result<Vec<PathBuf>, PipelineError> {
    fs::create_dir_all(dir).map_err(|source| PipelineError::Output { path: dir.to_path_buf(), source })?;
    let mut written = Vec::new();
    for (name, contents) in files {
        let path = dir.join(name);
        if let Err(source) = fs::write(&path, contents) {
            for p in &written {
                let _ = fs::remove_file(p);
            }
            return Err(PipelineError::Output { path, source });
        }
        written.push(path);
    }
    Ok(written)
}

/// The `run` command.
pub fn run(cfg: &RunConfig, exec: Execution) -> Result<RunSummary, PipelineError> {
    cfg.validate()?;
    let evaluator = build_evaluator(cfg)?;
    let corpus = load_corpus(cfg)?;
    let citation_index = cfg
        .citation_index
        .as_ref()
        .map(|p| FileCitationIndex::load(p))
        .transpose()?;
    let calibration = cfg.calibration.as_ref().map(|p| load_calibration_sample(p)).transpose()?;
    log::info!(
        "loaded {} queries, {} traces from {} models",
        corpus.queries.len(),
        corpus.traces.len(),
        corpus.model_ids().len()
    );
    if cfg.validate_only {
        return Ok(RunSummary {
            n_queries: corpus.queries.len(),
            n_traces: corpus.traces.len(),
            models: corpus.model_ids(),
            surface: None,
            files: Vec::new(),
        });
    }
    if corpus.traces.is_empty() {
        return Err(PipelineError::Config("no traces to evaluate".into()));
    }

    let (stats, signals) = extract_all(&corpus.traces, &evaluator.patterns, exec);
    log::info!("corpus entropy median {:.4}, std {:.4}", stats.median, stats.std);

    let client = make_client(&cfg.classifier)?;
    let verdicts = evaluator.evaluate(&corpus, client.as_ref(), exec)?;
    log::info!("evaluated {} traces", verdicts.len());

    let oracle = VerdictOracle::from_verdicts(&verdicts, &corpus.queries)?;
    let routed = citation_index
        .as_ref()
        .map(|idx| RoutedOracle::new(&oracle, idx as &dyn CitationIndex, &corpus));
    if routed.is_none() && cfg.strategies.contains(&StrategyKind::Composed) {
        log::info!("no citation index given; composed judge verifies citation traces with the evaluator verdicts");
    }
    let pick = |kind: StrategyKind| -> &dyn VerificationOracle {
        match (&routed, kind) {
            (Some(r), StrategyKind::Composed) => r,
            _ => &oracle,
        }
    };
    let surface = cost_surface(
        &signals,
        &corpus.queries,
        &cfg.strategies,
        &cfg.budgets,
        cfg.entropy_score,
        &pick,
        exec,
    )?;

    let calibration_report = calibration.map(|human| tier3_calibrate(&verdicts, &human)).transpose()?;

    let mut verdicts_csv = format!("{VERDICTS_CSV_HEADER}\n");
    for v in &verdicts {
        let _ = writeln!(verdicts_csv, "{}", verdict_csv_row(v));
    }
    let auc_rows = auc_report(&signals, &corpus.queries);
    let files = [
        ("verdicts.csv", verdicts_csv),
        ("signals.csv", signals_csv(&signals)),
        ("cost_surface.csv", surface.to_csv()),
        ("budget_curve.svg", surface.to_svg()),
        ("auc_report.csv", auc_report_csv(&auc_rows)),
        ("spearman_matrix.csv", spearman_matrix_csv(&spearman_matrix(&signals))),
        ("run_summary.txt", {
            let mut s = String::new();
            let _ = writeln!(s, "queries: {}", corpus.queries.len());
            let _ = writeln!(s, "traces: {}", corpus.traces.len());
            let _ = writeln!(s, "models: {}", corpus.model_ids().join(","));
            let _ = writeln!(s, "entropy score: {:?}", cfg.entropy_score);
            let _ = writeln!(s, "token entropy median {:.6}, std {:.6}", stats.median, stats.std);
            let _ = writeln!(s, "accuracy is pooled over all (query, model) pairs");
            let _ = writeln!(s, "baseline accuracy: {:.4}", surface.baseline_accuracy);
            let _ = writeln!(s, "citation index: {}", if routed.is_some() { "yes" } else { "no" });
            let _ = writeln!(s, "seed: {}", cfg.seed);
            if let Some(c) = &calibration_report {
                let _ = writeln!(
                    s,
                    "calibration: {}/{} agree ({:.4}), {} too generous, {} too strict",
                    c.n_agree, c.n_sampled, c.agreement_rate, c.auto_too_generous, c.auto_too_strict
                );
            }
            s
        }),
    ];
    let written = write_all(&cfg.output_dir, &files)?;
    Ok(RunSummary {
        n_queries: corpus.queries.len(),
        n_traces: corpus.traces.len(),
        models: corpus.model_ids(),
        surface: Some(surface),
        files: written,
    })
}

pub fn signals_csv(signals: &[SignalVector]) -> String {
    let mut out = format!("{}\n", SignalVector::CSV_HEADER);
    for s in signals {
        let _ = writeln!(out, "{}", s.csv_row());
    }
    out
}

/// The `simulate` command. `None` runs the bundled default scenario.
pub fn simulate(scenario: Option<&Path>, seed: Option<u64>, exec: Execution) -> Result<PropertiesReport, PipelineError> {
    let scenario = match scenario {
        Some(p) => Scenario::load(p)?,
        None => Scenario::parse(DEFAULT_SCENARIO)?,
    };
    Ok(run_scenario(&scenario, seed, exec)?)
}

pub const TDA_CSV_HEADER: &str = "query_id,model_id,n_points,fragmentation,coherence,h0_pairs,h1_pairs";

/// The `tda` command: per-trace fragmentation and coherence for every trace
/// carrying an attention block, sorted by key.
pub fn tda_report(traces_path: &Path, exec: Execution) -> Result<String, PipelineError> {
    let mut set = load_traces(traces_path)?;
    set.traces.sort_by_key(|t| t.key());
    let with_attention: Vec<_> = set.traces.iter().filter(|t| t.attention_summary.is_some()).collect();
    let rows = exec.try_map(&with_attention, |t| {
        let block = t.attention_summary.as_ref().expect("filtered");
        let tda_err = |source| PipelineError::Tda { key: t.key().to_string(), source };
        let cloud = PointCloud::from_attention(block).map_err(tda_err)?;
        let d = rips_persistence(&cloud, 1, None).map_err(tda_err)?;
        Ok::<_, PipelineError>(format!(
            "{},{},{},{:.6},{:.6},{},{}",
            t.query_id,
            t.model_id,
            cloud.len(),
            fragmentation(&d),
            coherence(&d),
            d.pairs_in(0).count(),
            d.pairs_in(1).count()
        ))
    })?;
    let mut out = format!("{TDA_CSV_HEADER}\n");
    for r in rows {
        out.push_str(&r);
        out.push('\n');
    }
    Ok(out)
}

pub fn tda(traces_path: &Path, out: &Path, exec: Execution) -> Result<(), PipelineError> {
    let report = tda_report(traces_path, exec)?;
    fs::write(out, report).map_err(|source| PipelineError::Output { path: out.to_path_buf(), source })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classifier_mode_parses() {
        assert_eq!("replay:a/b.jsonl".parse(), Ok(ClassifierMode::Replay("a/b.jsonl".into())));
        assert_eq!("live:http://x".parse(), Ok(ClassifierMode::Live("http://x".into())));
        assert!("http://x".parse::<ClassifierMode>().is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = RunConfig::new("q".into(), "t".into(), "o".into());
        cfg.validate().unwrap();
        cfg.strategies.clear();
        assert_eq!(cfg.validate().unwrap_err().exit_code(), 2);
        let mut cfg = RunConfig::new("q".into(), "t".into(), "o".into());
        cfg.budgets = vec![0.3, 0.1];
        assert!(cfg.validate().is_err());
        cfg.budgets = vec![0.1, 1.5];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn exit_codes() {
        let client = PipelineError::Eval(EvalError::ClientUnavailable(crate::evaluator::ClientError::Unavailable(
            "down".into(),
        )));
        assert_eq!(client.exit_code(), 3);
        assert_eq!(PipelineError::Input(TraceModelError::DuplicateId("q".into())).exit_code(), 2);
        assert_eq!(PipelineError::Judge(JudgeError::EmptyCorpus).exit_code(), 1);
    }
}
