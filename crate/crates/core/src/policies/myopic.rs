use super::{Policy, PolicyDecision, Variant};
use crate::error::Result;
use crate::feasibility::{CandidateSet, MatchCandidate};
use crate::matching::Assignment;
use crate::sim::{Environment, SystemState};

/// Greedy baseline: couriers in variant order each take the candidate
/// serving the most still-free orders, then the one returning soonest.
pub fn myopic_decide(state: &SystemState, cands: &CandidateSet, env: &Environment, variant: Variant) -> PolicyDecision {
    let now = state.now(&env.params);
    let n = state.couriers.len();
    let mut used = vec![false; cands.n_orders];
    let mut chosen = vec![0; n];
    for c in variant.order(&state.couriers, &vec![0; n], now) {
        let best = cands.per_courier[c]
            .iter()
            .enumerate()
            .filter(|(_, m)| m.batch.iter().all(|&o| !used[o]))
            .max_by(|(_, a), (_, b)| preference(a, b));
        if let Some((k, m)) = best {
            m.batch.iter().for_each(|&o| used[o] = true);
            chosen[c] = k;
        }
    }
    let scores = chosen.iter().enumerate().map(|(c, &k)| cands.per_courier[c][k].reward).collect::<Vec<_>>();
    PolicyDecision {
        assignment: Assignment {
            objective: scores.iter().sum(),
            chosen,
        },
        scores,
    }
}

/// `Greater` when `a` is preferred: more orders, then earlier return, then
/// the lexicographically smaller batch.
fn preference(a: &MatchCandidate, b: &MatchCandidate) -> std::cmp::Ordering {
    let ret = |m: &MatchCandidate| m.route.as_ref().map(|r| r.return_time).unwrap_or(f64::NEG_INFINITY);
    a.batch
        .len()
        .cmp(&b.batch.len())
        .then_with(|| ret(b).total_cmp(&ret(a)))
        .then_with(|| b.batch.cmp(&a.batch))
}

pub struct MyopicPolicy {
    pub variant: Variant,
}

impl Policy for MyopicPolicy {
    fn name(&self) -> String {
        format!("myopic-{}", self.variant)
    }

    fn decide(&mut self, state: &SystemState, cands: &CandidateSet, env: &Environment) -> Result<PolicyDecision> {
        Ok(myopic_decide(state, cands, env, self.variant))
    }
}
