//! Composition graphs of atomic subclaims and their verification cost.

use serde::{Deserialize, Serialize};

use super::FormalError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    Entailment,
    Coreference,
    Causal,
    Temporal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DependencyEdge {
    pub from: String,
    pub to: String,
    pub kind: EdgeKind,
}

/// Subclaims of a response and the dependencies between them. Cycles are
/// allowed.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompositionGraph {
    pub nodes: Vec<String>,
    #[serde(default)]
    pub edges: Vec<DependencyEdge>,
}

impl CompositionGraph {
    /// `n` claims with every pair constrained.
    pub fn clique(n: usize) -> Self {
        let nodes: Vec<String> = (0..n).map(|i| format!("c{i}")).collect();
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                edges.push(DependencyEdge {
                    from: nodes[i].clone(),
                    to: nodes[j].clone(),
                    kind: EdgeKind::Entailment,
                });
            }
        }
        CompositionGraph { nodes, edges }
    }

    pub fn validate(&self) -> Result<(), FormalError> {
        for e in &self.edges {
            for end in [&e.from, &e.to] {
                if !self.nodes.contains(end) {
                    return Err(FormalError::DanglingEdge(end.clone()));
                }
            }
        }
        Ok(())
    }
}

/// Cost of checking every dependency once: `per_edge_cost · |E|`.
pub fn verification_cost(graph: &CompositionGraph, per_edge_cost: f64) -> Result<f64, FormalError> {
    if per_edge_cost.is_nan() || per_edge_cost <= 0.0 {
        return Err(FormalError::BadCost(per_edge_cost));
    }
    graph.validate()?;
    Ok(per_edge_cost * graph.edges.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(verification_cost(&CompositionGraph::default(), 1.0), Ok(0.0));
        assert_eq!(verification_cost(&CompositionGraph::clique(4), 1.0), Ok(6.0));
        assert_eq!(verification_cost(&CompositionGraph::clique(4), 0.0), Err(FormalError::BadCost(0.0)));
        let dangling = CompositionGraph {
            nodes: vec!["a".into()],
            edges: vec![DependencyEdge { from: "a".into(), to: "b".into(), kind: EdgeKind::Causal }],
        };
        assert_eq!(verification_cost(&dangling, 1.0), Err(FormalError::DanglingEdge("b".into())));
    }

    #[test]
    fn symmetric_coreference_cycle_is_fine() {
        let g = CompositionGraph {
            nodes: vec!["a".into(), "b".into()],
            edges: vec![
                DependencyEdge { from: "a".into(), to: "b".into(), kind: EdgeKind::Coreference },
                DependencyEdge { from: "b".into(), to: "a".into(), kind: EdgeKind::Coreference },
            ],
        };
        assert_eq!(verification_cost(&g, 2.5), Ok(5.0));
    }

    #[test]
    fn clique_cost_per_claim_grows() {
        let mut prev = -1.0;
        for n in 1..40usize {
            let g = CompositionGraph::clique(n);
            assert_eq!(g.edges.len(), n * (n - 1) / 2);
            let per_claim = verification_cost(&g, 1.0).unwrap() / n as f64;
            assert_eq!(per_claim, (n as f64 - 1.0) / 2.0);
            assert!(per_claim > prev);
            prev = per_claim;
        }
    }
}
