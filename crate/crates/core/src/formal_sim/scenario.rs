//! Scenario files and the properties report.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{verification_cost, CompositionGraph};
use super::honesty::{check_honesty_feasible, AmbiguityInstance, HonestyCheck};
use super::layering::{observation_universe, stack_judges, RandomJudge};
use super::learning::{run_learning, LinearUpdateRule, SupervisorSpec};
use super::tensor::{default_items, model_check, ObservationMode, ResponseItem};
use super::{FormalError, Observation, Response, WorldModel};
use crate::Execution;

/// The scenario shipped with the crate.
pub const DEFAULT_SCENARIO: &str = include_str!("../../scenarios/default.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expectation {
    Feasible,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpsilonCheck {
    pub epsilon: f64,
    /// Defaults to infeasible below one half and feasible otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect: Option<Expectation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearningConfig {
    pub steps: usize,
    pub rules: usize,
    /// Fraction of rules that must diverge once the budget covers every
    /// verification.
    pub min_divergent_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_params: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayeringConfig {
    pub stacks: usize,
    pub max_depth: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub query: String,
    pub world_a: WorldModel,
    pub world_b: WorldModel,
    pub responses: Vec<Response>,
    pub correct_response: Response,
    pub fabrication: Response,
    pub supervisor: SupervisorSpec,
    pub epsilon_checks: Vec<EpsilonCheck>,
    pub learning: LearningConfig,
    pub layering: LayeringConfig,
    /// Largest clique used for the cost-growth sweep.
    pub max_claims: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tensor_items: Option<Vec<ResponseItem>>,
}

impl Scenario {
    pub fn parse(source: &str) -> Result<Self, FormalError> {
        serde_json::from_str(source).map_err(|e| FormalError::Scenario(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, FormalError> {
        let source = fs::read_to_string(path).map_err(|e| FormalError::Scenario(format!("{}: {e}", path.display())))?;
        Self::parse(&source)
    }

    pub fn instance(&self) -> Result<AmbiguityInstance, FormalError> {
        AmbiguityInstance::new(
            self.query.clone(),
            self.world_a.clone(),
            self.world_b.clone(),
            self.correct_response.clone(),
            self.responses.clone(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertiesReport {
    pub scenario: String,
    pub seed: u64,
    pub properties: Vec<PropertyResult>,
    pub all_passed: bool,
}

impl PropertiesReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

fn result(name: &str, outcome: Result<(bool, String), FormalError>) -> PropertyResult {
    let (passed, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
    PropertyResult { name: name.into(), passed, detail }
}

/// Runs every property check in `scenario`. `seed` overrides the
/// scenario's seed when given.
pub fn run_scenario(scenario: &Scenario, seed: Option<u64>, exec: Execution) -> Result<PropertiesReport, FormalError> {
    let seed = seed.unwrap_or(scenario.seed);
    let inst = scenario.instance()?;
    let properties = vec![
        result("representational_impossibility", check_representational(scenario, &inst)),
        result("learnability_impossibility", check_learnability(scenario, &inst, seed, exec)),
        result("observation_monotonicity", check_monotonicity(scenario, seed)),
        result("superlinear_verification_cost", check_cost_growth(scenario)),
        result("tensor_escape", check_tensor(scenario)),
    ];
    let all_passed = properties.iter().all(|p| p.passed);
    Ok(PropertiesReport {
        scenario: scenario.name.clone(),
        seed,
        properties,
        all_passed,
    })
}

fn check_representational(scenario: &Scenario, inst: &AmbiguityInstance) -> Result<(bool, String), FormalError> {
    let mut mismatches = Vec::new();
    for c in &scenario.epsilon_checks {
        let expected = c.expect.unwrap_or(if c.epsilon < 0.5 {
            Expectation::Infeasible
        } else {
            Expectation::Feasible
        });
        let got = match check_honesty_feasible(inst, c.epsilon)? {
            HonestyCheck::Feasible(policy) => {
                if !policy.is_honest(inst, c.epsilon) {
                    mismatches.push(format!("eps={}: witness fails honesty", c.epsilon));
                }
                Expectation::Feasible
            }
            HonestyCheck::Infeasible { required_mass } => {
                if required_mass <= 1.0 {
                    mismatches.push(format!("eps={}: certificate {required_mass} <= 1", c.epsilon));
                }
                Expectation::Infeasible
            }
        };
        if got != expected {
            mismatches.push(format!("eps={}: expected {expected:?}, got {got:?}", c.epsilon));
        }
    }
    Ok(if mismatches.is_empty() {
        (true, format!("{} epsilon checks matched", scenario.epsilon_checks.len()))
    } else {
        (false, mismatches.join("; "))
    })
}

fn check_learnability(
    scenario: &Scenario,
    inst: &AmbiguityInstance,
    seed: u64,
    exec: Execution,
) -> Result<(bool, String), FormalError> {
    let cfg = &scenario.learning;
    let initial = cfg
        .initial_params
        .clone()
        .unwrap_or_else(|| vec![0.0; inst.responses.len()]);
    let sup = &scenario.supervisor;
    sup.check_regime(inst, &scenario.fabrication)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rules: Vec<(LinearUpdateRule, u64)> = (0..cfg.rules)
        .map(|_| (LinearUpdateRule::random(&mut rng, &inst.responses), rng.gen()))
        .collect();
    let mut unbounded = sup.clone();
    unbounded.budget = sup.max_cost(inst)? + 1.0;

    let outcomes = exec.try_map(&rules, |(rule, run_seed)| -> Result<(bool, bool), FormalError> {
        let run = |s: &SupervisorSpec, w: &WorldModel, enforce: bool| {
            run_learning(rule, s, inst, &scenario.fabrication, w, &initial, *run_seed, cfg.steps, enforce)
        };
        let identical = run(sup, &inst.w_a, true)?.to_bytes() == run(sup, &inst.w_b, true)?.to_bytes();
        let diverged = run(&unbounded, &inst.w_a, false)?.to_bytes() != run(&unbounded, &inst.w_b, false)?.to_bytes();
        Ok((identical, diverged))
    })?;
    let identical = outcomes.iter().filter(|o| o.0).count();
    let diverged = outcomes.iter().filter(|o| o.1).count();
    let needed = (cfg.min_divergent_fraction * cfg.rules as f64 - 1e-9).ceil() as usize;
    Ok((
        identical == cfg.rules && diverged >= needed,
        format!(
            "{identical}/{} rules identical under the regime; {diverged}/{} diverge with budget {} (need {needed})",
            cfg.rules, cfg.rules, unbounded.budget
        ),
    ))
}

fn check_monotonicity(scenario: &Scenario, seed: u64) -> Result<(bool, String), FormalError> {
    let cfg = &scenario.layering;
    let universe = observation_universe(std::slice::from_ref(&scenario.query), &scenario.responses);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6c61_7965_7273);
    let mut failures = 0;
    let mut total_layers = 0;
    for _ in 0..cfg.stacks {
        let depth = rng.gen_range(0..=cfg.max_depth);
        let judges: Vec<RandomJudge> = (0..depth).map(|_| RandomJudge::new(rng.gen(), universe.clone())).collect();
        let fns: Vec<_> = judges.iter().map(|j| move |o: &Observation| j.judge(o)).collect();
        let refs: Vec<&dyn Fn(&Observation) -> Observation> = fns.iter().map(|f| f as _).collect();
        let input = universe[rng.gen_range(0..universe.len())].clone();
        let layers = stack_judges(&refs, &input, &input.clone());
        total_layers += layers.len() - 1;
        if layers.iter().any(|(a, b)| a != b) {
            failures += 1;
        }
    }
    Ok((
        failures == 0,
        format!("{} stacks ({total_layers} layers), {failures} with unequal outputs", cfg.stacks),
    ))
}

fn check_cost_growth(scenario: &Scenario) -> Result<(bool, String), FormalError> {
    let per_edge = scenario.supervisor.cost_model.per_edge_cost;
    for (name, g) in &scenario.supervisor.cost_model.graphs {
        let cost = verification_cost(g, per_edge)?;
        if cost != per_edge * g.edges.len() as f64 {
            return Ok((false, format!("graph {name}: cost {cost} != {per_edge}*{}", g.edges.len())));
        }
    }
    let mut prev = f64::NEG_INFINITY;
    for n in 1..=scenario.max_claims {
        let per_claim = verification_cost(&CompositionGraph::clique(n), per_edge)? / n as f64;
        let closed_form = per_edge * (n as f64 - 1.0) / 2.0;
        if (per_claim - closed_form).abs() > 1e-9 * closed_form.max(1.0) || per_claim <= prev {
            return Ok((false, format!("clique of {n}: cost per claim {per_claim}, expected {closed_form}")));
        }
        prev = per_claim;
    }
    Ok((
        true,
        format!(
            "{} graphs priced per edge; clique cost per claim increasing up to {} claims",
            scenario.supervisor.cost_model.graphs.len(),
            scenario.max_claims
        ),
    ))
}

fn check_tensor(scenario: &Scenario) -> Result<(bool, String), FormalError> {
    let items = scenario.tensor_items.clone().unwrap_or_else(default_items);
    let text = model_check(&items, ObservationMode::TextOnly)?;
    let tensor = model_check(&items, ObservationMode::Tensor)?;
    let detail = format!(
        "text-only: {} states, counterexample {}; tensor: {} states, counterexample {}",
        text.states_explored,
        text.counterexample.as_ref().map_or("none".into(), |c| c.exported.clone()),
        tensor.states_explored,
        tensor.counterexample.as_ref().map_or("none".into(), |c| c.exported.clone()),
    );
    Ok((text.counterexample.is_some() && tensor.counterexample.is_none(), detail))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_scenario_passes() {
        let s = Scenario::parse(DEFAULT_SCENARIO).unwrap();
        let report = run_scenario(&s, None, Execution::default()).unwrap();
        for p in &report.properties {
            assert!(p.passed, "{}: {}", p.name, p.detail);
        }
        assert!(report.all_passed);
        assert_eq!(report, run_scenario(&s, None, Execution::Sequential).unwrap());
    }

    #[test]
    fn wrong_expectation_is_a_mismatch() {
        let mut s = Scenario::parse(DEFAULT_SCENARIO).unwrap();
        s.learning.rules = 3;
        s.epsilon_checks = vec![EpsilonCheck { epsilon: 0.6, expect: Some(Expectation::Infeasible) }];
        let report = run_scenario(&s, None, Execution::Sequential).unwrap();
        assert!(!report.properties[0].passed);
        assert!(!report.all_passed);
    }

    #[test]
    fn regime_violation_surfaces() {
        let mut s = Scenario::parse(DEFAULT_SCENARIO).unwrap();
        s.learning.rules = 3;
        s.supervisor.budget = 1e9;
        let report = run_scenario(&s, None, Execution::Sequential).unwrap();
        let learn = &report.properties[1];
        assert!(!learn.passed);
        assert!(learn.detail.contains("verifiable"), "{}", learn.detail);
    }

    #[test]
    fn unknown_fields_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(DEFAULT_SCENARIO).unwrap();
        v["surprise"] = 1.into();
        assert!(Scenario::parse(&v.to_string()).is_err());
    }
}
