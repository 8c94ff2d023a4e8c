//! Learning from a bounded supervisor.
//!
//! The policy is a softmax over per-response logits for the ambiguous query.
//! Each step samples a response, forms the supervisor's observation, derives
//! a reward from that observation alone, and applies an update rule. All
//! randomness comes from explicit draws on a seeded generator, so identical
//! observations give identical trajectories bit for bit.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{verification_cost, CompositionGraph};
use super::honesty::AmbiguityInstance;
use super::{FormalError, Observation, Response, WorldModel};

/// Keeps logits bounded so long random runs stay finite.
const PARAM_BOUND: f64 = 50.0;

/// An explicit verification cost. `None` fields match anything.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query: Option<String>,
    pub response: Response,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub world: Option<String>,
    pub cost: f64,
}

/// `C_verify(q, r, w)`: the first matching explicit entry, otherwise the
/// composition-graph cost of `r` if it has a graph, otherwise the default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    #[serde(default)]
    pub entries: Vec<CostEntry>,
    #[serde(default)]
    pub graphs: BTreeMap<String, CompositionGraph>,
    #[serde(default = "one")]
    pub per_edge_cost: f64,
    #[serde(default)]
    pub default_cost: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            entries: Vec::new(),
            graphs: BTreeMap::new(),
            per_edge_cost: 1.0,
            default_cost: 0.0,
        }
    }
}

impl CostModel {
    pub fn cost(&self, query: &str, response: &Response, world: &WorldModel) -> Result<f64, FormalError> {
        let hit = self.entries.iter().find(|e| {
            e.response == *response
                && e.query.as_deref().is_none_or(|q| q == query)
                && e.world.as_deref().is_none_or(|w| w == world.world_id)
        });
        if let Some(e) = hit {
            return Ok(e.cost);
        }
        if let Response::Text(t) = response {
            if let Some(g) = self.graphs.get(t) {
                return verification_cost(g, self.per_edge_cost);
            }
        }
        Ok(self.default_cost)
    }
}

/// Reward as a function of the observation only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardRule {
    pub verified_correct: f64,
    pub verified_incorrect: f64,
    pub unverified_answer: f64,
    pub unverified_abstain: f64,
}

impl Default for RewardRule {
    /// Unverified fluent answers earn partial credit, abstentions none.
    fn default() -> Self {
        RewardRule {
            verified_correct: 1.0,
            verified_incorrect: -1.0,
            unverified_answer: 0.5,
            unverified_abstain: 0.0,
        }
    }
}

impl RewardRule {
    pub fn reward(&self, obs: &Observation) -> f64 {
        match (&obs.response, obs.verification) {
            (_, Some(true)) => self.verified_correct,
            (_, Some(false)) => self.verified_incorrect,
            (Response::Abstain, None) => self.unverified_abstain,
            (Response::Text(_), None) => self.unverified_answer,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisorSpec {
    pub budget: f64,
    pub cost_model: CostModel,
    #[serde(default)]
    pub reward_rule: RewardRule,
}

impl SupervisorSpec {
    /// `Obs(q, r, w)`: verification happens only within budget.
    pub fn observe(&self, query: &str, response: &Response, world: &WorldModel) -> Result<Observation, FormalError> {
        let cost = self.cost_model.cost(query, response, world)?;
        Ok(Observation {
            query: query.to_string(),
            response: response.clone(),
            verification: (cost <= self.budget).then(|| world.is_correct(query, response)),
        })
    }

    /// The hallucination-regime premise for learning on `inst`: the
    /// fabrication is unverifiable in both worlds, and every other response
    /// the policy can emit looks the same to the supervisor in both worlds.
    pub fn check_regime(&self, inst: &AmbiguityInstance, fabrication: &Response) -> Result<(), FormalError> {
        for world in [&inst.w_a, &inst.w_b] {
            let cost = self.cost_model.cost(&inst.query, fabrication, world)?;
            if cost <= self.budget {
                return Err(FormalError::CostModelViolatesRegime {
                    response: fabrication.to_string(),
                    world: world.world_id.clone(),
                    cost,
                    budget: self.budget,
                });
            }
        }
        for r in &inst.responses {
            let a = self.observe(&inst.query, r, &inst.w_a)?;
            let b = self.observe(&inst.query, r, &inst.w_b)?;
            if a != b {
                let world = if a.verification.is_some() { &inst.w_a } else { &inst.w_b };
                return Err(FormalError::CostModelViolatesRegime {
                    response: r.to_string(),
                    world: world.world_id.clone(),
                    cost: self.cost_model.cost(&inst.query, r, world)?,
                    budget: self.budget,
                });
            }
        }
        Ok(())
    }

    /// Largest verification cost over the instance's responses and worlds.
    pub fn max_cost(&self, inst: &AmbiguityInstance) -> Result<f64, FormalError> {
        let mut max = 0.0f64;
        for w in [&inst.w_a, &inst.w_b] {
            for r in &inst.responses {
                max = max.max(self.cost_model.cost(&inst.query, r, w)?);
            }
        }
        Ok(max)
    }
}

/// A learning update: a pure function of the observation, its reward, the
/// current parameters and one uniform draw.
pub trait UpdateRule {
    fn update(&self, obs: &Observation, reward: f64, params: &[f64], draw: f64) -> Vec<f64>;
}

/// `θ'ᵢ = θᵢ + lr·(aᵢ·R + bᵢ·R·[i chosen] + cᵢ·v + dᵢ·(u − ½) − eᵢ·θᵢ)`
/// where `v` is +1/−1/0 for verified correct/incorrect/unverified.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearUpdateRule {
    pub responses: Vec<Response>,
    pub learning_rate: f64,
    pub reward_coef: Vec<f64>,
    pub chosen_coef: Vec<f64>,
    pub verify_coef: Vec<f64>,
    pub noise_coef: Vec<f64>,
    pub decay: Vec<f64>,
}

impl LinearUpdateRule {
    pub fn random<R: Rng>(rng: &mut R, responses: &[Response]) -> Self {
        let n = responses.len();
        let mut coefs = |lo: f64, hi: f64| (0..n).map(|_| rng.gen_range(lo..hi)).collect::<Vec<f64>>();
        LinearUpdateRule {
            responses: responses.to_vec(),
            learning_rate: 0.05,
            reward_coef: coefs(-1.0, 1.0),
            chosen_coef: coefs(-1.0, 1.0),
            verify_coef: coefs(-1.0, 1.0),
            noise_coef: coefs(-1.0, 1.0),
            decay: coefs(0.0, 0.1),
        }
    }
}

impl UpdateRule for LinearUpdateRule {
    fn update(&self, obs: &Observation, reward: f64, params: &[f64], draw: f64) -> Vec<f64> {
        let v = match obs.verification {
            Some(true) => 1.0,
            Some(false) => -1.0,
            None => 0.0,
        };
        let chosen = self.responses.iter().position(|r| *r == obs.response);
        params
            .iter()
            .enumerate()
            .map(|(i, &theta)| {
                let picked = if chosen == Some(i) { 1.0 } else { 0.0 };
                let delta = self.reward_coef[i] * reward
                    + self.chosen_coef[i] * reward * picked
                    + self.verify_coef[i] * v
                    + self.noise_coef[i] * (draw - 0.5)
                    - self.decay[i] * theta;
                (theta + self.learning_rate * delta).clamp(-PARAM_BOUND, PARAM_BOUND)
            })
            .collect()
    }
}

/// Parameters after each step, starting with the initial vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub params: Vec<Vec<f64>>,
}

impl Trajectory {
    /// Raw IEEE-754 bytes of every parameter, in order.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.params
            .iter()
            .flatten()
            .flat_map(|x| x.to_bits().to_le_bytes())
            .collect()
    }

    /// First step index at which the two trajectories differ.
    pub fn first_divergence(&self, other: &Trajectory) -> Option<usize> {
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<u64>>();
        (0..self.params.len().max(other.params.len())).find(|&i| match (self.params.get(i), other.params.get(i)) {
            (Some(a), Some(b)) => bits(a) != bits(b),
            _ => true,
        })
    }
}

fn sample(params: &[f64], u: f64) -> usize {
    let max = params.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = params.iter().map(|p| (p - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w / total;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

/// Trains on the ambiguous query in `world` for `steps` steps.
///
/// With `enforce_regime`, refuses to run unless the supervisor satisfies the
/// hallucination-regime premise for `fabrication` on `inst`.
#[allow(clippy::too_many_arguments)]
pub fn run_learning(
    rule: &dyn UpdateRule,
    supervisor: &SupervisorSpec,
    inst: &AmbiguityInstance,
    fabrication: &Response,
    world: &WorldModel,
    initial: &[f64],
    seed: u64,
    steps: usize,
    enforce_regime: bool,
) -> Result<Trajectory, FormalError> {
    if initial.len() != inst.responses.len() {
        return Err(FormalError::ParamLength {
            expected: inst.responses.len(),
            found: initial.len(),
        });
    }
    if enforce_regime {
        supervisor.check_regime(inst, fabrication)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = initial.to_vec();
    let mut trajectory = Vec::with_capacity(steps + 1);
    trajectory.push(params.clone());
    for _ in 0..steps {
        let pick: f64 = rng.gen();
        let draw: f64 = rng.gen();
        let response = &inst.responses[sample(&params, pick)];
        let obs = supervisor.observe(&inst.query, response, world)?;
        let reward = supervisor.reward_rule.reward(&obs);
        params = rule.update(&obs, reward, &params, draw);
        trajectory.push(params.clone());
    }
    Ok(Trajectory { params: trajectory })
}
