//! Seeded synthetic corpora with a controlled entropy signal.
//!
//! Each query has a shared difficulty offset, so a model's mean entropy is
//! `base + shift·[unknowable] + query_effect + trace_noise`. With Gaussian
//! terms the pooled AUC of mean entropy is `Φ(shift / (σ√2))` where
//! `σ² = query_sd² + trace_sd²`. Response length gets a weaker shift of its
//! own. Outcomes are drawn independently of both signals.
//!
//! Texts are written so the stratified evaluator recovers the drawn labels:
//! correct answers contain the expected answer, abstentions carry the
//! producer flag, and everything else is escalated to a replay transcript.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::judges::{Verification, VerdictOracle};
use crate::trace_model::{
    write_queries, write_traces, Category, Corpus, GenerationTrace, Label, QueryRecord, TraceKey, TraceSet, TruthStatus,
};

/// `Φ⁻¹(0.75)`.
const PROBIT_THREE_QUARTERS: f64 = 0.674_489_750_196_081_7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub n_knowable: usize,
    pub n_unknowable: usize,
    pub n_models: usize,
    pub base_entropy: f64,
    pub query_sd: f64,
    pub trace_sd: f64,
    /// Mean-entropy gap between unknowable and knowable traces.
    pub entropy_shift: f64,
    /// Spread of per-token entropies around the trace mean.
    pub token_sd: f64,
    pub base_length: f64,
    pub length_sd: f64,
    pub length_shift: f64,
    pub p_correct: f64,
    pub p_abstain: f64,
    pub vocab_size_bound: u64,
}

impl Default for SyntheticConfig {
    /// 200 queries × 4 models. σ = 0.5 and the shift targets a mean-entropy
    /// AUC of 0.75; the length shift targets about 0.60. Outcome rates give
    /// a no-judge accuracy near 0.758.
    fn default() -> Self {
        let (query_sd, trace_sd) = (0.4, 0.3);
        let sigma = f64::hypot(query_sd, trace_sd);
        SyntheticConfig {
            seed: 0,
            n_knowable: 100,
            n_unknowable: 100,
            n_models: 4,
            base_entropy: 2.0,
            query_sd,
            trace_sd,
            entropy_shift: shift_for_auc_075(sigma),
            token_sd: 0.3,
            base_length: 40.0,
            length_sd: 12.0,
            length_shift: 4.3,
            p_correct: 0.9,
            p_abstain: 0.616,
            vocab_size_bound: 50_000,
        }
    }
}

impl SyntheticConfig {
    pub fn with_seed(seed: u64) -> Self {
        SyntheticConfig { seed, ..Default::default() }
    }

    pub fn model_ids(&self) -> Vec<String> {
        (1..=self.n_models).map(|i| format!("m{i}")).collect()
    }
}

/// Mean shift between two normals of spread `sigma` that separates them
/// with AUC 0.75.
pub fn shift_for_auc_075(sigma: f64) -> f64 {
    sigma * std::f64::consts::SQRT_2 * PROBIT_THREE_QUARTERS
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub config: SyntheticConfig,
    pub queries: Vec<QueryRecord>,
    pub traces: TraceSet,
    /// Classifier replies for every trace the evaluator escalates.
    pub replies: Vec<(TraceKey, String)>,
    /// The drawn label of every trace.
    pub labels: BTreeMap<TraceKey, Label>,
}

const KNOWABLE: [Category; 2] = [Category::Control, Category::Wombat];
const UNKNOWABLE: [Category; 3] = [Category::Westphalia, Category::PrivateFuture, Category::Glavinsky];

pub fn generate(config: &SyntheticConfig) -> SyntheticCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut queries = Vec::new();
    let mut traces = Vec::new();
    let mut replies = Vec::new();
    let mut labels = BTreeMap::new();
    let models = config.model_ids();
    let ln_v = (config.vocab_size_bound as f64).ln();

    let n = config.n_knowable + config.n_unknowable;
    for qi in 0..n {
        let unknowable = qi >= config.n_knowable;
        let query_id = format!("q{qi:04}");
        let (category, truth, expected) = if unknowable {
            (UNKNOWABLE[qi % UNKNOWABLE.len()], TruthStatus::Underdetermined, vec![])
        } else {
            (KNOWABLE[qi % KNOWABLE.len()], TruthStatus::Determined, vec![format!("answer{qi}")])
        };
        queries.push(QueryRecord {
            query_id: query_id.clone(),
            text: format!("Synthetic question {qi}?"),
            category,
            truth_status: truth,
            expected_answers: expected,
        });
        let query_effect = config.query_sd * std_normal.sample(&mut rng);
        let shift = if unknowable { 1.0 } else { 0.0 };

        for model_id in &models {
            let mean = (config.base_entropy
                + config.entropy_shift * shift
                + query_effect
                + config.trace_sd * std_normal.sample(&mut rng))
            .clamp(0.0, ln_v);
            let len = (config.base_length
                + config.length_shift * shift
                + config.length_sd * std_normal.sample(&mut rng))
            .round()
            .max(3.0) as usize;
            let entropies = token_entropies(&mut rng, &std_normal, mean, config.token_sd, len, ln_v);
            let key = TraceKey::new(&query_id, model_id);

            let (label, text, is_abstention) = if unknowable {
                if rng.gen::<f64>() < config.p_abstain {
                    (Label::Refusal, "I don't know.".to_string(), true)
                } else {
                    (Label::Incorrect, format!("It was settled as fabricated{qi}."), false)
                }
            } else if rng.gen::<f64>() < config.p_correct {
                (Label::Correct, format!("The answer is answer{qi}."), false)
            } else {
                (Label::Incorrect, format!("The answer is wrong{qi}."), false)
            };
            if label == Label::Incorrect {
                replies.push((key.clone(), "INCORRECT".to_string()));
            }
            labels.insert(key, label);
            traces.push(GenerationTrace {
                query_id: query_id.clone(),
                model_id: model_id.clone(),
                text,
                tokens: (0..len).map(|i| format!("t{i}")).collect(),
                token_entropies: entropies,
                topk_logprobs: None,
                attention_summary: None,
                is_abstention,
            });
        }
    }
    SyntheticCorpus {
        config: config.clone(),
        queries,
        traces: TraceSet {
            vocab_size_bound: config.vocab_size_bound,
            traces,
        },
        replies,
        labels,
    }
}

/// `len` token entropies with sample mean `mean` (up to clamping at the
/// bounds).
fn token_entropies<R: Rng>(rng: &mut R, normal: &Normal<f64>, mean: f64, sd: f64, len: usize, max: f64) -> Vec<f64> {
    let noise: Vec<f64> = (0..len).map(|_| sd * normal.sample(rng)).collect();
    let centre = noise.iter().sum::<f64>() / len as f64;
    noise.iter().map(|e| (mean + e - centre).clamp(0.0, max)).collect()
}

impl SyntheticCorpus {
    pub fn corpus(&self) -> Corpus {
        Corpus::join(self.queries.clone(), self.traces.clone(), true).expect("synthetic corpus is consistent")
    }

    /// A perfect verifier returning the drawn labels.
    pub fn oracle(&self) -> VerdictOracle {
        let truth: BTreeMap<&str, TruthStatus> =
            self.queries.iter().map(|q| (q.query_id.as_str(), q.truth_status)).collect();
        VerdictOracle::new(self.labels.iter().map(|(k, &label)| {
            (k.clone(), Verification { label, truth: truth[k.query_id.as_str()] })
        }))
    }

    pub fn replay_jsonl(&self) -> String {
        let mut out = String::new();
        for (key, reply) in &self.replies {
            let line = serde_json::json!({"query_id": key.query_id, "model_id": key.model_id, "reply": reply});
            let _ = writeln!(out, "{line}");
        }
        out
    }

    /// Writes `queries.csv`, `traces.jsonl` and `replay.jsonl` into `dir`.
    pub fn write(&self, dir: &Path) -> io::Result<[PathBuf; 3]> {
        fs::create_dir_all(dir)?;
        let paths = [dir.join("queries.csv"), dir.join("traces.jsonl"), dir.join("replay.jsonl")];
        write_queries(io::BufWriter::new(fs::File::create(&paths[0])?), &self.queries)?;
        write_traces(io::BufWriter::new(fs::File::create(&paths[1])?), &self.traces)?;
        fs::write(&paths[2], self.replay_jsonl())?;
        Ok(paths)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluator::{Evaluator, ReplayClient};
    use crate::Execution;

    fn small() -> SyntheticConfig {
        SyntheticConfig {
            n_knowable: 10,
            n_unknowable: 10,
            n_models: 2,
            ..SyntheticConfig::with_seed(7)
        }
    }

    #[test]
    fn shape_and_determinism() {
        let c = generate(&small());
        assert_eq!(c.queries.len(), 20);
        assert_eq!(c.traces.traces.len(), 40);
        assert_eq!(c, generate(&small()));
        assert_ne!(c.traces, generate(&SyntheticConfig { seed: 8, ..small() }).traces);
        for t in &c.traces.traces {
            t.validate(c.traces.vocab_size_bound).unwrap();
        }
    }

    #[test]
    fn token_mean_matches_target() {
        let normal = Normal::new(0.0, 1.0).unwrap();
        let hs = token_entropies(&mut ChaCha8Rng::seed_from_u64(1), &normal, 2.5, 0.3, 50, 10.0);
        let mean = hs.iter().sum::<f64>() / 50.0;
        assert!((mean - 2.5).abs() < 1e-12);
    }

    #[test]
    fn shift_gives_three_quarter_auc() {
        // Φ(shift / (σ√2)) = 0.75, checked by a midpoint-rule integral of the normal density
        let z = shift_for_auc_075(0.5) / (0.5 * std::f64::consts::SQRT_2);
        let steps = 200_000;
        let lo = -12.0;
        let h = (z - lo) / steps as f64;
        let phi: f64 = (0..steps)
            .map(|i| {
                let x = lo + (i as f64 + 0.5) * h;
                (-x * x / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt() * h
            })
            .sum();
        assert!((phi - 0.75).abs() < 1e-9);
    }

    #[test]
    fn evaluator_recovers_drawn_labels() {
        let c = generate(&small());
        let corpus = c.corpus();
        let client = ReplayClient::new(c.replies.clone());
        let verdicts = Evaluator { window: 4, ..Default::default() }
            .evaluate(&corpus, &client, Execution::default())
            .unwrap();
        for v in verdicts {
            assert_eq!(Some(&v.label), c.labels.get(&v.key()), "{}", v.key());
        }
    }
}
