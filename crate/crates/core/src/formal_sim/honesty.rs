//! Feasibility of ε-honesty for a policy that cannot see the world.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{FormalError, Response, WorldModel, WorldTruth};

/// A query that is answerable (with `r_corr`) in `w_a` and unanswerable in
/// `w_b`, over a finite response set containing both `r_corr` and ⊥.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmbiguityInstance {
    pub query: String,
    pub w_a: WorldModel,
    pub w_b: WorldModel,
    pub r_corr: Response,
    pub responses: Vec<Response>,
}

impl AmbiguityInstance {
    pub fn new(
        query: impl Into<String>,
        w_a: WorldModel,
        w_b: WorldModel,
        r_corr: Response,
        responses: Vec<Response>,
    ) -> Result<Self, FormalError> {
        let inst = AmbiguityInstance {
            query: query.into(),
            w_a,
            w_b,
            r_corr,
            responses,
        };
        inst.validate()?;
        Ok(inst)
    }

    /// Two worlds disagreeing on one query, responses `{r, ⊥}`.
    pub fn minimal(query: &str, r_corr: &str) -> Self {
        let world = |id: &str, t: WorldTruth| WorldModel {
            world_id: id.into(),
            truth: BTreeMap::from([(query.to_string(), t)]),
        };
        AmbiguityInstance {
            query: query.into(),
            w_a: world("w_A", WorldTruth::Determined(Response::text(r_corr))),
            w_b: world("w_B", WorldTruth::Underdetermined),
            r_corr: Response::text(r_corr),
            responses: vec![Response::text(r_corr), Response::Abstain],
        }
    }

    pub fn validate(&self) -> Result<(), FormalError> {
        let bad = |m: &str| Err(FormalError::BadInstance(m.into()));
        if self.r_corr == Response::Abstain {
            return bad("r_corr must not be the abstention");
        }
        if self.w_a.truth.get(&self.query) != Some(&WorldTruth::Determined(self.r_corr.clone())) {
            return bad("query must be determined by r_corr in w_A");
        }
        if self.w_b.truth.get(&self.query) != Some(&WorldTruth::Underdetermined) {
            return bad("query must be underdetermined in w_B");
        }
        if !self.responses.contains(&self.r_corr) || !self.responses.contains(&Response::Abstain) {
            return bad("response set must contain r_corr and the abstention");
        }
        Ok(())
    }
}

/// A tabular policy `π(r | q)` with no world input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorCentricPolicy {
    pub responses: Vec<Response>,
    pub table: BTreeMap<String, Vec<f64>>,
}

impl PredictorCentricPolicy {
    pub fn validate(&self) -> Result<(), FormalError> {
        for (query, row) in &self.table {
            let sum: f64 = row.iter().sum();
            if row.len() != self.responses.len() || row.iter().any(|p| *p < 0.0) || (sum - 1.0).abs() > 1e-12 {
                return Err(FormalError::PolicyNotNormalized { query: query.clone(), sum });
            }
        }
        Ok(())
    }

    pub fn prob(&self, query: &str, response: &Response) -> f64 {
        let Some(row) = self.table.get(query) else { return 0.0 };
        self.responses
            .iter()
            .position(|r| r == response)
            .map_or(0.0, |i| row[i])
    }

    /// ε-honesty in both worlds: `π(r_corr) ≥ 1−ε` (w_A) and `π(⊥) ≥ 1−ε`
    /// (w_B). Since the policy does not see the world, one row must do both.
    pub fn is_honest(&self, inst: &AmbiguityInstance, epsilon: f64) -> bool {
        self.validate().is_ok()
            && self.prob(&inst.query, &inst.r_corr) >= 1.0 - epsilon
            && self.prob(&inst.query, &Response::Abstain) >= 1.0 - epsilon
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum HonestyCheck {
    Feasible(PredictorCentricPolicy),
    /// The two honesty constraints need `required_mass = 2(1−ε) > 1`.
    Infeasible { required_mass: f64 },
}

impl HonestyCheck {
    pub fn is_feasible(&self) -> bool {
        matches!(self, HonestyCheck::Feasible(_))
    }
}

pub fn check_honesty_feasible(inst: &AmbiguityInstance, epsilon: f64) -> Result<HonestyCheck, FormalError> {
    if !(0.0..1.0).contains(&epsilon) {
        return Err(FormalError::BadEpsilon(epsilon));
    }
    inst.validate()?;
    let required_mass = 2.0 * (1.0 - epsilon);
    if required_mass > 1.0 {
        return Ok(HonestyCheck::Infeasible { required_mass });
    }
    let row = inst
        .responses
        .iter()
        .map(|r| if *r == inst.r_corr || *r == Response::Abstain { 0.5 } else { 0.0 })
        .collect();
    let policy = PredictorCentricPolicy {
        responses: inst.responses.clone(),
        table: BTreeMap::from([(inst.query.clone(), row)]),
    };
    debug_assert!(policy.is_honest(inst, epsilon));
    Ok(HonestyCheck::Feasible(policy))
}
