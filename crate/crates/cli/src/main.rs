//! `et`: command-line front end for the verification cost-surface engine.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use et_core::judges::{EntropyScore, StrategyKind};
use et_core::pipeline::{self, ClassifierMode, PatternPaths, PipelineError, RunConfig, DEFAULT_WINDOW};
use et_core::synthetic::{generate, SyntheticConfig};
use et_core::Execution;

#[derive(Parser, Debug)]
#[command(name = "et", version, about = "Budgeted verification of language-model outputs")]
struct Cli {
    /// Run loops on one thread even when built with rayon.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Evaluate a trace corpus and write the cost surface and reports.
    Run(Box<RunArgs>),
    /// Run the formal property checks for a scenario.
    Simulate(SimulateArgs),
    /// Per-trace persistence features of attention summaries.
    Tda(TdaArgs),
    /// Write a synthetic corpus (queries, traces, classifier replay).
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    traces: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated budget fractions, strictly ascending.
    #[arg(long, default_value = "0.1,0.2,0.3")]
    budgets: String,
    /// Comma-separated subset of nojudge,text,tensor,composed.
    #[arg(long, default_value = "nojudge,text,tensor,composed")]
    strategies: String,
    #[arg(long, default_value = "mean")]
    entropy_score: EntropyScore,
    /// `replay:<path>` or `live:<url>`.
    #[arg(long)]
    classifier: Option<ClassifierMode>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Check inputs and exit without writing anything.
    #[arg(long)]
    validate_only: bool,
    #[arg(long)]
    hedges: Option<PathBuf>,
    #[arg(long)]
    refusals: Option<PathBuf>,
    #[arg(long)]
    negations: Option<PathBuf>,
    #[arg(long)]
    irregulars: Option<PathBuf>,
    /// CSV of known references (title,doi,authors,year).
    #[arg(long)]
    citation_index: Option<PathBuf>,
    /// Human-labelled sample to compare automatic verdicts against.
    #[arg(long)]
    calibration: Option<PathBuf>,
    /// Maximum in-flight classifier requests.
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    window: usize,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Scenario JSON; the bundled default when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct TdaArgs {
    #[arg(long)]
    traces: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    knowable: Option<usize>,
    #[arg(long)]
    unknowable: Option<usize>,
    #[arg(long)]
    models: Option<usize>,
}

fn parse_list<T: std::str::FromStr<Err = String>>(s: &str) -> Result<Vec<T>, PipelineError> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse().map_err(PipelineError::Config))
        .collect()
}

fn parse_budgets(s: &str) -> Result<Vec<f64>, PipelineError> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse::<f64>().map_err(|_| PipelineError::Config(format!("bad budget `{p}`"))))
        .collect()
}

fn run_config(a: RunArgs) -> Result<RunConfig, PipelineError> {
    let mut cfg = RunConfig::new(a.queries, a.traces, a.out);
    cfg.strategies = parse_list::<StrategyKind>(&a.strategies)?;
    cfg.budgets = parse_budgets(&a.budgets)?;
    cfg.entropy_score = a.entropy_score;
    cfg.classifier = a.classifier;
    cfg.seed = a.seed;
    cfg.validate_only = a.validate_only;
    cfg.patterns = PatternPaths {
        hedges: a.hedges,
        refusals: a.refusals,
        negations: a.negations,
        irregulars: a.irregulars,
    };
    cfg.citation_index = a.citation_index;
    cfg.calibration = a.calibration;
    cfg.window = a.window;
    Ok(cfg)
}

fn cmd_run(a: RunArgs, exec: Execution) -> Result<(), PipelineError> {
    let cfg = run_config(a)?;
    let summary = pipeline::run(&cfg, exec)?;
    if cfg.validate_only {
        println!(
            "ok: {} queries, {} traces, {} models",
            summary.n_queries,
            summary.n_traces,
            summary.models.len()
        );
        return Ok(());
    }
    if let Some(surface) = &summary.surface {
        print!("{}", surface.to_csv());
    }
    for f in &summary.files {
        log::info!("wrote {}", f.display());
    }
    Ok(())
}

fn cmd_simulate(a: SimulateArgs, exec: Execution) -> anyhow::Result<bool> {
    let report = pipeline::simulate(a.scenario.as_deref(), a.seed, exec)?;
    let json = report.to_json();
    match &a.out {
        Some(p) => std::fs::write(p, &json).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{json}"),
    }
    for p in &report.properties {
        let tag = if p.passed { "PASS" } else { "FAIL" };
        eprintln!("{tag} {}: {}", p.name, p.detail);
    }
    Ok(report.all_passed)
}

fn cmd_synth(a: SynthArgs) -> anyhow::Result<()> {
    let mut config = SyntheticConfig::with_seed(a.seed);
    if let Some(n) = a.knowable {
        config.n_knowable = n;
    }
    if let Some(n) = a.unknowable {
        config.n_unknowable = n;
    }
    if let Some(n) = a.models {
        config.n_models = n;
    }
    let corpus = generate(&config);
    let paths = corpus
        .write(&a.out)
        .with_context(|| format!("writing synthetic corpus to {}", a.out.display()))?;
    for p in paths {
        println!("{}", p.display());
    }
    Ok(())
}

fn exit_for(err: &anyhow::Error) -> u8 {
    err.downcast_ref::<PipelineError>()
        .map(|e| e.exit_code() as u8)
        .unwrap_or(1)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ET_LOG", "warn")).init();
    let cli = Cli::parse();
    let exec = if cli.sequential { Execution::Sequential } else { Execution::default() };
    let outcome: anyhow::Result<bool> = match cli.command {
        Command::Run(a) => cmd_run(*a, exec).map(|_| true).map_err(Into::into),
        Command::Simulate(a) => cmd_simulate(a, exec),
        Command::Tda(a) => pipeline::tda(&a.traces, &a.out, exec).map(|_| true).map_err(Into::into),
        Command::Synth(a) => cmd_synth(a).map(|_| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_for(&e))
        }
    }
}
