//! Executable model of text-only supervision: worlds, predictor-centric
//! policies, bounded supervisors, learning under identical observations,
//! layered judges, composition-graph verification cost, and the tensor
//! observation mode.
//!
//! Each impossibility result is a runnable property check; see
//! [`scenario::run_scenario`] for the full report.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub mod graph;
pub mod honesty;
pub mod layering;
pub mod learning;
pub mod scenario;
pub mod tensor;

pub use graph::{verification_cost, CompositionGraph, DependencyEdge, EdgeKind};
pub use honesty::{check_honesty_feasible, AmbiguityInstance, HonestyCheck, PredictorCentricPolicy};
pub use layering::{observation_universe, stack_judges, RandomJudge};
pub use learning::{run_learning, CostEntry, CostModel, LinearUpdateRule, RewardRule, SupervisorSpec, Trajectory, UpdateRule};
pub use scenario::{run_scenario, Expectation, PropertyResult, PropertiesReport, Scenario, DEFAULT_SCENARIO};
pub use tensor::{model_check, ObservationMode, ResponseItem};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormalError {
    #[error("epsilon must lie in [0, 1), got {0}")]
    BadEpsilon(f64),
    #[error("ambiguity instance invalid: {0}")]
    BadInstance(String),
    #[error("policy row for {query} sums to {sum}")]
    PolicyNotNormalized { query: String, sum: f64 },
    #[error("fabrication {response} is verifiable in world {world} (cost {cost} <= budget {budget})")]
    CostModelViolatesRegime {
        response: String,
        world: String,
        cost: f64,
        budget: f64,
    },
    #[error("per-edge cost must be positive, got {0}")]
    BadCost(f64),
    #[error("edge endpoint {0} is not a node")]
    DanglingEdge(String),
    #[error("parameter vector has length {found}, expected {expected}")]
    ParamLength { expected: usize, found: usize },
    #[error("too many response items for exhaustive checking: {0}")]
    TooManyItems(usize),
    #[error("scenario: {0}")]
    Scenario(String),
}

/// A response: an abstention (⊥) or a text answer.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Response {
    Abstain,
    Text(String),
}

impl Response {
    pub fn text(s: impl Into<String>) -> Self {
        Response::Text(s.into())
    }
}

impl fmt::Display for Response {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Response::Abstain => f.write_str("abstain"),
            Response::Text(t) => f.write_str(t),
        }
    }
}

/// Scenario files write ⊥ as the string `"abstain"`.
impl Serialize for Response {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Response {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(if s == "abstain" || s == "⊥" { Response::Abstain } else { Response::Text(s) })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorldTruth {
    Determined(Response),
    Underdetermined,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldModel {
    pub world_id: String,
    pub truth: BTreeMap<String, WorldTruth>,
}

impl WorldModel {
    /// Whether `response` is the honest answer to `query` in this world.
    pub fn is_correct(&self, query: &str, response: &Response) -> bool {
        match self.truth.get(query) {
            Some(WorldTruth::Determined(c)) => c == response,
            Some(WorldTruth::Underdetermined) => *response == Response::Abstain,
            None => false,
        }
    }
}

/// What a bounded supervisor sees: `(q, r, verify(r, w) or ∅)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Observation {
    pub query: String,
    pub response: Response,
    pub verification: Option<bool>,
}
