//! Tensor- and text-channel features extracted from one trace.
//!
//! Entropies are in nats. The spike threshold uses the median and the
//! population standard deviation of every token entropy in the run
//! ([`CorpusStats`]), not per-trace statistics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::{self, PatternList};
use crate::trace_model::{GenerationTrace, TraceKey};
use crate::Execution;

const NORMALIZATION_TOLERANCE: f64 = 1e-9;
const TOPK_MASS_TOLERANCE: f64 = 1e-6;
/// Multiplier on the corpus standard deviation in the spike threshold.
pub const SPIKE_SIGMAS: f64 = 1.5;

#[derive(Debug, Error, PartialEq)]
pub enum SignalError {
    #[error("probabilities sum to {0}, not 1")]
    NotNormalized(f64),
    #[error("negative probability {value} at index {index}")]
    NegativeProbability { index: usize, value: f64 },
    #[error("top-k log-probabilities are not sorted descending")]
    Unsorted,
    #[error("top-k probability mass {0} exceeds 1")]
    MassExceedsOne(f64),
}

fn plogp(p: f64) -> f64 {
    if p > 0.0 {
        p * p.ln()
    } else {
        0.0
    }
}

/// Neumaier-compensated sum.
fn compensated_sum(xs: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut c) = (0.0f64, 0.0f64);
    for x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            c += (sum - t) + x;
        } else {
            c += (x - t) + sum;
        }
        sum = t;
    }
    sum + c
}

/// Shannon entropy `-Σ p ln p` of a probability vector, with `0 ln 0 = 0`.
pub fn token_entropy(distribution: &[f64]) -> Result<f64, SignalError> {
    if let Some((index, &value)) = distribution
        .iter()
        .enumerate()
        .find(|(_, &p)| p < 0.0 || p.is_nan())
    {
        return Err(SignalError::NegativeProbability { index, value });
    }
    let total = compensated_sum(distribution.iter().copied());
    if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
        return Err(SignalError::NotNormalized(total));
    }
    let h = -compensated_sum(distribution.iter().map(|&p| plogp(p)));
    let upper = (distribution.len().max(1) as f64).ln();
    // `+ 0.0` turns the -0.0 of a one-hot row into +0.0
    Ok(h.clamp(0.0, upper) + 0.0)
}

/// Entropy of the top-k distribution with the remaining mass pooled into a
/// single atom.
///
/// Pooling atoms never increases entropy, so the result is a lower bound on
/// the entropy of any distribution that agrees on the top-k entries.
pub fn entropy_lower_bound_topk(topk: &[(String, f64)]) -> Result<f64, SignalError> {
    let logprobs: Vec<f64> = topk.iter().map(|(_, lp)| *lp).collect();
    pooled_tail_entropy(&logprobs)
}

/// [`entropy_lower_bound_topk`] over bare log-probabilities.
pub fn pooled_tail_entropy(logprobs: &[f64]) -> Result<f64, SignalError> {
    if logprobs.windows(2).any(|w| w[0] < w[1]) {
        return Err(SignalError::Unsorted);
    }
    let probs: Vec<f64> = logprobs.iter().map(|lp| lp.exp()).collect();
    let mass = compensated_sum(probs.iter().copied());
    if mass > 1.0 + TOPK_MASS_TOLERANCE {
        return Err(SignalError::MassExceedsOne(mass));
    }
    let tail = (1.0 - mass).max(0.0);
    let h = -compensated_sum(probs.iter().map(|&p| plogp(p)).chain(std::iter::once(plogp(tail))));
    Ok(h.max(0.0))
}

/// Run-level statistics of all token entropies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub median: f64,
    pub std: f64,
    pub n_tokens: usize,
}

impl CorpusStats {
    pub fn new(median: f64, std: f64) -> Self {
        CorpusStats {
            median,
            std,
            n_tokens: 0,
        }
    }

    /// Pools every token entropy of every trace.
    pub fn from_traces<'a>(traces: impl IntoIterator<Item = &'a GenerationTrace>) -> Self {
        let mut all: Vec<f64> = traces
            .into_iter()
            .flat_map(|t| t.token_entropies.iter().copied())
            .collect();
        if all.is_empty() {
            return CorpusStats::new(0.0, 0.0);
        }
        all.sort_by(f64::total_cmp);
        let n = all.len();
        let median = if n % 2 == 1 {
            all[n / 2]
        } else {
            0.5 * (all[n / 2 - 1] + all[n / 2])
        };
        let (_, std) = mean_std(&all);
        CorpusStats {
            median,
            std,
            n_tokens: n,
        }
    }

    pub fn spike_threshold(&self) -> f64 {
        self.median + SPIKE_SIGMAS * self.std
    }
}

/// One-pass (Welford) mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let delta = x - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (x - mean);
    }
    (mean, (m2 / xs.len() as f64).max(0.0).sqrt())
}

/// Hedge and refusal phrase lists.
#[derive(Debug, Clone)]
pub struct TextPatterns {
    pub hedges: PatternList,
    pub refusals: PatternList,
}

impl Default for TextPatterns {
    fn default() -> Self {
        TextPatterns {
            hedges: PatternList::parse(text::DEFAULT_HEDGES),
            refusals: PatternList::parse(text::DEFAULT_REFUSALS),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalVector {
    pub key: TraceKey,
    pub mean_entropy: f64,
    pub max_entropy: f64,
    pub entropy_std: f64,
    pub spike_count: usize,
    pub response_length: usize,
    pub hedge_flag: bool,
    pub refusal_flag: bool,
    pub topk_entropy_lb_mean: Option<f64>,
    pub degenerate: bool,
}

impl SignalVector {
    pub const CSV_HEADER: &'static str = "query_id,model_id,mean_entropy,max_entropy,entropy_std,spike_count,response_length,hedge_flag,refusal_flag,topk_entropy_lb_mean,degenerate";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.6},{:.6},{:.6},{},{},{},{},{},{}",
            self.key.query_id,
            self.key.model_id,
            self.mean_entropy,
            self.max_entropy,
            self.entropy_std,
            self.spike_count,
            self.response_length,
            self.hedge_flag,
            self.refusal_flag,
            self.topk_entropy_lb_mean
                .map(|v| format!("{v:.6}"))
                .unwrap_or_default(),
            self.degenerate
        )
    }
}

/// Computes every feature of one trace.
///
/// Refusal is flagged when the producer marked the trace as an abstention or
/// a refusal template matches. Empty traces are `degenerate` with all
/// numeric fields zero.
pub fn aggregate_signals(
    trace: &GenerationTrace,
    corpus: &CorpusStats,
    patterns: &TextPatterns,
) -> SignalVector {
    let toks = text::tokens(&trace.text);
    let hedge_flag = patterns.hedges.matches_tokens(&toks);
    let refusal_flag = trace.is_abstention || patterns.refusals.matches_tokens(&toks);
    let key = trace.key();

    if trace.tokens.is_empty() {
        return SignalVector {
            key,
            mean_entropy: 0.0,
            max_entropy: 0.0,
            entropy_std: 0.0,
            spike_count: 0,
            response_length: 0,
            hedge_flag,
            refusal_flag,
            topk_entropy_lb_mean: None,
            degenerate: true,
        };
    }

    let hs = &trace.token_entropies;
    let (mean, std) = mean_std(hs);
    let max = hs.iter().copied().fold(0.0f64, f64::max);
    let threshold = corpus.spike_threshold();
    let spike_count = hs.iter().filter(|&&h| h > threshold).count();

    let topk_entropy_lb_mean = trace.topk_logprobs.as_ref().and_then(|rows| {
        let lbs: Vec<f64> = rows
            .iter()
            .filter_map(|row| entropy_lower_bound_topk(row).ok())
            .collect();
        (!lbs.is_empty()).then(|| lbs.iter().sum::<f64>() / lbs.len() as f64)
    });

    SignalVector {
        key,
        // rounding can leave the Welford mean a hair above the max
        mean_entropy: mean.min(max),
        max_entropy: max,
        entropy_std: std,
        spike_count,
        response_length: trace.tokens.len(),
        hedge_flag,
        refusal_flag,
        topk_entropy_lb_mean,
        degenerate: false,
    }
}

/// Computes [`CorpusStats`] in a sequential pass, then every trace's signals.
pub fn extract_all(
    traces: &[GenerationTrace],
    patterns: &TextPatterns,
    exec: Execution,
) -> (CorpusStats, Vec<SignalVector>) {
    let stats = CorpusStats::from_traces(traces);
    let signals = exec.map(traces, |t| aggregate_signals(t, &stats, patterns));
    (stats, signals)
}
