//! Verification cost-surface engine for language-model outputs.
//!
//! The crate ingests per-token generation telemetry ([`trace_model`]),
//! extracts tensor- and text-channel features ([`signals`]), labels traces
//! with a stratified evaluator ([`evaluator`]), simulates budget-bounded
//! judge strategies ([`judges`]) and reports the resulting budget→accuracy
//! surface ([`metrics`]). [`formal_sim`] is an executable model of the
//! bounded-supervisor observation setting whose impossibility statements run
//! as property checks, and [`tda`] computes persistent homology over attention
//! point clouds.
//!
//! Data-parallel loops go through [`exec::Execution`]; with the default
//! `parallel` feature they fan out over rayon, otherwise they run sequentially.

pub mod evaluator;
pub mod exec;
pub mod formal_sim;
pub mod judges;
pub mod metrics;
pub mod pipeline;
pub mod released;
pub mod signals;
pub mod synthetic;
pub mod tda;
pub mod text;
pub mod trace_model;

pub use exec::Execution;
pub use trace_model::{
    Category, GenerationTrace, Label, QueryRecord, Tier, TraceKey, TruthStatus, Verdict,
};
