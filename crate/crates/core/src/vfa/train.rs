//! The NeurADP training loop.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::candidate_features;
use super::learn::{
    bellman_targets, perturb_for_exploration, score_features, sync_target, update, Experience, NextEpoch,
    TargetSync,
};
use super::net::{ValueArch, ValueNet};
use super::nn::Adam;
use super::replay::{ReplayBuffer, ReplayConfig};
use crate::error::{OdpError, Result};
use crate::matching::solve_matching;
use crate::rng::derive_seed;
use crate::sim::{DayStream, Environment, Episode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub episodes: usize,
    pub gamma: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Decision epochs between gradient updates.
    pub update_every: usize,
    pub grad_clip: f64,
    pub sigma_start: f64,
    /// Fraction of episodes over which exploration noise decays to zero.
    pub sigma_decay_fraction: f64,
    pub target_sync: TargetSync,
    pub replay_capacity: usize,
    pub replay_alpha: f64,
    pub replay_beta_start: f64,
    pub priority_eps: f64,
    pub d_embed: usize,
    pub hidden: usize,
    pub dense: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 40,
            gamma: 1.0,
            learning_rate: 1e-3,
            batch_size: 32,
            update_every: 1,
            grad_clip: 10.0,
            sigma_start: 0.1,
            sigma_decay_fraction: 0.6,
            target_sync: TargetSync::Hard { every: 200 },
            replay_capacity: 10_000,
            replay_alpha: 0.6,
            replay_beta_start: 0.4,
            priority_eps: 1e-3,
            d_embed: 8,
            hidden: 32,
            dense: vec![64, 32],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.update_every == 0 {
            return Err(OdpError::Config("batch_size and update_every must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(OdpError::Config(format!("gamma {} outside [0, 1]", self.gamma)));
        }
        if self.sigma_start < 0.0 || !(self.learning_rate > 0.0) {
            return Err(OdpError::Config("sigma must be >= 0 and learning rate > 0".into()));
        }
        Ok(())
    }

    pub fn arch(&self, env: &Environment) -> ValueArch {
        ValueArch {
            d_embed: self.d_embed,
            hidden: self.hidden,
            dense: self.dense.clone(),
            ..ValueArch::new(
                env.matrix.n_locations(),
                env.n_couriers(),
                env.params.queue_max,
                env.params.shift_length,
                env.beta,
            )
        }
    }

    /// Exploration noise for `episode`.
    pub fn sigma(&self, episode: usize) -> f64 {
        let span = self.sigma_decay_fraction * self.episodes as f64;
        if span <= 0.0 {
            return 0.0;
        }
        (self.sigma_start * (1.0 - episode as f64 / span)).max(0.0)
    }
}

/// One line of the training log, written after every gradient update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogLine {
    pub episode: usize,
    pub update: usize,
    pub loss: f64,
    /// Matched share of orders seen so far in the episode, percent.
    pub fill_pct: f64,
    pub sigma: f64,
    pub buffer: usize,
}

/// Prediction net, target net, optimiser and replay state.
pub struct Learner {
    pub cfg: TrainConfig,
    pub prediction: ValueNet,
    pub target: ValueNet,
    pub opt: Adam,
    pub replay: ReplayBuffer<Experience>,
    pub updates: usize,
    rng: ChaCha8Rng,
}

impl Learner {
    pub fn new(cfg: TrainConfig, arch: ValueArch, seed: u64) -> Self {
        let prediction = ValueNet::new(arch, derive_seed(seed, 1));
        let replay = ReplayBuffer::new(ReplayConfig {
            capacity: cfg.replay_capacity,
            alpha: cfg.replay_alpha,
            beta_start: cfg.replay_beta_start,
            beta_end: 1.0,
            priority_eps: cfg.priority_eps,
        });
        Self {
            opt: Adam::new(prediction.n_params(), cfg.learning_rate),
            target: prediction.clone(),
            prediction,
            replay,
            updates: 0,
            rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, 2)),
            cfg,
        }
    }

    /// Samples a minibatch and takes one step, or returns `None` while the
    /// buffer is too small.
    pub fn train_step(&mut self) -> Result<Option<f64>> {
        let Some(s) = self.replay.sample(self.cfg.batch_size, &mut self.rng) else {
            return Ok(None);
        };
        let batch: Vec<&Experience> = s.indices.iter().map(|&i| self.replay.get(i)).collect();
        let targets = batch
            .iter()
            .map(|e| bellman_targets(&self.target, &self.prediction, e, self.cfg.gamma))
            .collect::<Result<Vec<_>>>()?;
        let r = update(&mut self.prediction, &mut self.opt, &batch, &targets, &s.weights, self.cfg.grad_clip)?;
        for (&i, &td) in s.indices.iter().zip(&r.td) {
            self.replay.update_priority(i, td);
        }
        self.updates += 1;
        match self.cfg.target_sync {
            TargetSync::Hard { every } => {
                if every > 0 && self.updates % every == 0 {
                    sync_target(&self.prediction, &mut self.target, 1.0)?;
                }
            }
            TargetSync::Polyak { tau } => sync_target(&self.prediction, &mut self.target, tau)?,
        }
        Ok(Some(r.loss))
    }
}

/// Trains a value network on `days`, cycling through them one per episode.
/// `log` receives one line per gradient update.
pub fn train_neuradp(
    env: &Environment,
    days: &[DayStream],
    cfg: &TrainConfig,
    seed: u64,
    log: &mut dyn FnMut(&TrainLogLine),
) -> Result<ValueNet> {
    cfg.validate()?;
    let mut learner = Learner::new(cfg.clone(), cfg.arch(env), seed);
    if days.is_empty() {
        return Ok(learner.prediction);
    }
    let horizon = env.params.horizon_epochs;
    for ep in 0..cfg.episodes {
        let sigma = cfg.sigma(ep);
        learner.replay.set_progress(ep as f64 / cfg.episodes as f64);
        let explorer = perturb_for_exploration(&learner.prediction, sigma, derive_seed(seed, 1000 + ep as u64));
        let day = &days[ep % days.len()];
        let mut episode = Episode::new(env, day);
        let mut pending: Option<(usize, Vec<_>)> = None;
        let (mut seen, mut matched) = (0usize, 0usize);
        while !episode.is_done() {
            let state = episode.state();
            let t = state.t;
            let cands = episode.candidates();
            let feats = candidate_features(state, &cands, env);
            let scores: Vec<Vec<f64>> = score_features(&explorer, &feats)?
                .into_iter()
                .map(|row| row.into_iter().map(|v| cfg.gamma * v).collect())
                .collect();
            let assignment = solve_matching(&cands, &scores)?;
            let chosen: Vec<_> = assignment
                .chosen
                .iter()
                .enumerate()
                .map(|(c, &k)| feats[c][k].clone())
                .collect();
            if let Some((pt, pf)) = pending.take() {
                let next = NextEpoch::new(cands.clone(), feats, t + 1 < horizon);
                learner.replay.push(Experience { t: pt, features: pf, next: Some(next) });
            }
            pending = Some((t, chosen));
            let out = episode.step(&cands, &assignment)?;
            seen += out.matched + out.lost;
            matched += out.matched;
            if (t + 1) % cfg.update_every == 0 {
                if let Some(loss) = learner.train_step()? {
                    log(&TrainLogLine {
                        episode: ep,
                        update: learner.updates,
                        loss,
                        fill_pct: if seen == 0 { 0.0 } else { 100.0 * matched as f64 / seen as f64 },
                        sigma,
                        buffer: learner.replay.len(),
                    });
                }
            }
        }
        if let Some((pt, pf)) = pending.take() {
            learner.replay.push(Experience { t: pt, features: pf, next: None });
        }
    }
    Ok(learner.prediction)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigma_schedule() {
        let cfg = TrainConfig { episodes: 10, ..Default::default() };
        assert_eq!(cfg.sigma(0), 0.1);
        assert!((cfg.sigma(3) - 0.05).abs() < 1e-12);
        assert_eq!(cfg.sigma(6), 0.0);
        assert_eq!(cfg.sigma(9), 0.0);
    }
}
