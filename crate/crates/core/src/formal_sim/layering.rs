//! Stacks of judges that each see only the previous layer's output.

use super::{Observation, Response};

/// Runs both observations through the same stack. Element 0 is the input
/// pair; element `i` is the output of layer `i`.
pub fn stack_judges<O: Clone>(judges: &[&dyn Fn(&O) -> O], obs_a: &O, obs_b: &O) -> Vec<(O, O)> {
    let mut layers = Vec::with_capacity(judges.len() + 1);
    let mut cur = (obs_a.clone(), obs_b.clone());
    layers.push(cur.clone());
    for judge in judges {
        cur = (judge(&cur.0), judge(&cur.1));
        layers.push(cur.clone());
    }
    layers
}

/// An arbitrary deterministic map over a finite observation universe,
/// keyed by a seed.
#[derive(Debug, Clone)]
pub struct RandomJudge {
    seed: u64,
    universe: Vec<Observation>,
}

impl RandomJudge {
    pub fn new(seed: u64, universe: Vec<Observation>) -> Self {
        assert!(!universe.is_empty(), "judge universe must be non-empty");
        RandomJudge { seed, universe }
    }

    pub fn judge(&self, obs: &Observation) -> Observation {
        let code = self.universe.iter().position(|o| o == obs).unwrap_or(self.universe.len()) as u64;
        let h = splitmix64(self.seed ^ code.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        self.universe[(h % self.universe.len() as u64) as usize].clone()
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Every `(q, r, v)` triple over the given queries and responses.
pub fn observation_universe(queries: &[String], responses: &[Response]) -> Vec<Observation> {
    let mut out = Vec::new();
    for q in queries {
        for r in responses {
            for v in [None, Some(true), Some(false)] {
                out.push(Observation {
                    query: q.clone(),
                    response: r.clone(),
                    verification: v,
                });
            }
        }
    }
    out
}
