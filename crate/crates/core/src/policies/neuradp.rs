use super::{Policy, PolicyDecision};
use crate::error::Result;
use crate::feasibility::CandidateSet;
use crate::matching::{solve_matching, zero_scores};
use crate::sim::{Environment, SystemState};
use crate::vfa::{score_candidates, ValueNet};

/// Scores every candidate with `gamma * V(post-decision state)` and solves
/// the matching program. Without a network all scores are zero and the
/// decision maximises immediate reward.
pub fn neuradp_decide(
    state: &SystemState,
    cands: &CandidateSet,
    env: &Environment,
    net: Option<&ValueNet>,
    gamma: f64,
) -> Result<PolicyDecision> {
    let scores = match net {
        Some(net) => score_candidates(net, state, cands, env)?
            .into_iter()
            .map(|row| row.into_iter().map(|v| gamma * v).collect())
            .collect(),
        None => zero_scores(cands),
    };
    let assignment = solve_matching(cands, &scores)?;
    let chosen_scores = assignment.chosen.iter().enumerate().map(|(c, &k)| scores[c][k]).collect();
    Ok(PolicyDecision {
        assignment,
        scores: chosen_scores,
    })
}

pub struct NeurAdpPolicy {
    pub net: Option<ValueNet>,
    pub gamma: f64,
}

impl NeurAdpPolicy {
    pub fn new(net: ValueNet, gamma: f64) -> Self {
        Self { net: Some(net), gamma }
    }

    /// Matching on immediate reward only.
    pub fn immediate() -> Self {
        Self { net: None, gamma: 0.0 }
    }
}

impl Policy for NeurAdpPolicy {
    fn name(&self) -> String {
        "neuradp".into()
    }

    fn decide(&mut self, state: &SystemState, cands: &CandidateSet, env: &Environment) -> Result<PolicyDecision> {
        neuradp_decide(state, cands, env, self.net.as_ref(), self.gamma)
    }
}
