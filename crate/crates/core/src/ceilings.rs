//! Artificial upper references for fulfilled orders.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::policies::{NeurAdpPolicy, Policy};
use crate::sim::{run_episode, DayStream, Environment, Episode, EpisodeMetrics};
use crate::vfa::{train_neuradp, TrainConfig};

/// Runs the day with instant delivery: matched orders count as delivered
/// on the spot and on-shift couriers start every epoch empty at the depot.
/// Matching still respects shifts, capacity and deadlines and maximises
/// immediate reward.
pub fn direct_ceiling(env: &Environment, day: &DayStream) -> Result<EpisodeMetrics> {
    let mut policy = NeurAdpPolicy::immediate();
    let mut ep = Episode::teleporting(env, day);
    while !ep.is_done() {
        let cands = ep.candidates();
        let d = policy.decide(ep.state(), &cands, env)?;
        ep.step(&cands, &d.assignment)?;
    }
    Ok(ep.finish())
}

/// Trains NeurADP on `day` alone and evaluates it greedily on that day.
pub fn fixed_ceiling(env: &Environment, day: &DayStream, cfg: &TrainConfig, seed: u64) -> Result<EpisodeMetrics> {
    let net = train_neuradp(env, std::slice::from_ref(day), cfg, seed, &mut |_| {})?;
    run_episode(&mut NeurAdpPolicy::new(net, cfg.gamma), day, env)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CeilingDay {
    pub day: usize,
    pub arrivals: usize,
    pub direct: usize,
    pub fixed: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CeilingReport {
    pub seed: u64,
    pub days: Vec<CeilingDay>,
}
