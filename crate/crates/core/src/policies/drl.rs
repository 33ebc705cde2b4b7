//! Accept/reject baseline: a double deep Q-network decides per order, and
//! accepted orders go to a courier picked by the variant heuristic.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Policy, PolicyDecision, Variant};
use crate::error::{OdpError, Result};
use crate::feasibility::CandidateSet;
use crate::matching::Assignment;
use crate::rng::derive_seed;
use crate::sim::{DayStream, Environment, Episode, Order, SystemState};
use crate::vfa::nn::{clip_grad_norm, Adam, MlpShape};
use crate::vfa::{Checkpoint, ReplayBuffer, ReplayConfig};

pub const DDQN_KIND: &str = "ddqn";
const ACCEPT: usize = 0;
const REJECT: usize = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdqnArch {
    pub n_couriers: usize,
    pub n_locations: usize,
    pub hidden: Vec<usize>,
}

impl DdqnArch {
    pub fn new(n_couriers: usize, n_locations: usize) -> Self {
        Self {
            n_couriers,
            n_locations,
            hidden: vec![32, 64, 64, 32],
        }
    }

    pub fn n_inputs(&self) -> usize {
        3 * self.n_couriers + 6 + self.n_locations
    }

    fn shape(&self) -> MlpShape {
        let mut sizes = vec![self.n_inputs()];
        sizes.extend(&self.hidden);
        sizes.push(2);
        MlpShape::new(sizes)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdqnNet {
    pub arch: DdqnArch,
    pub params: Vec<f64>,
}

impl DdqnNet {
    pub fn new(arch: DdqnArch, seed: u64) -> Self {
        let shape = arch.shape();
        let mut params = vec![0.0; shape.n_params()];
        shape.init(&mut params, false, &mut ChaCha8Rng::seed_from_u64(seed));
        Self { arch, params }
    }

    /// (accept, reject) action values.
    pub fn q(&self, x: &[f64]) -> [f64; 2] {
        let mut acts = Vec::new();
        self.arch.shape().forward(&self.params, x, &mut acts);
        let out = acts.last().unwrap();
        [out[0], out[1]]
    }

    pub fn save(&self, path: &std::path::Path, meta: serde_json::Value) -> Result<()> {
        Checkpoint::new(DDQN_KIND, &self.arch, &self.params, meta)?.save(path)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let ck = Checkpoint::load(path, DDQN_KIND)?;
        let arch: DdqnArch = serde_json::from_value(ck.arch)?;
        if arch.shape().n_params() != ck.params.len() {
            return Err(OdpError::ArchitectureMismatch(format!(
                "{}: parameter count does not fit the declared architecture",
                path.display()
            )));
        }
        Ok(Self { arch, params: ck.params })
    }
}

/// Network input for deciding on `order`: per courier its time to depot,
/// occupancy including tentative additions and shift flag; fleet counts;
/// the order's direct time, slack and destination (one-hot).
pub fn ddqn_features(
    state: &SystemState,
    extra: &[usize],
    order: &Order,
    remaining: usize,
    env: &Environment,
) -> Vec<f64> {
    let p = &env.params;
    let now = state.now(p);
    let n = state.couriers.len().max(1) as f64;
    let n_loc = env.matrix.n_locations();
    let mut x = Vec::with_capacity(3 * state.couriers.len() + 6 + n_loc);
    let (mut off, mut depot) = (0.0, 0.0);
    for (c, courier) in state.couriers.iter().enumerate() {
        let on = courier.on_shift(now, p.shift_length);
        off += f64::from(u8::from(!on));
        depot += f64::from(u8::from(on && courier.at_depot(now)));
        x.push(courier.ret(now) / 60.0);
        x.push((courier.load() + extra[c]) as f64 / p.queue_max as f64);
        x.push(f64::from(u8::from(on)));
    }
    let direct = env.matrix.direct(order.dest);
    x.extend([
        off / n,
        depot / n,
        state.t as f64 / p.horizon_epochs as f64,
        remaining as f64 / n,
        direct / 60.0,
        (order.dead - now - direct) / 60.0,
    ]);
    let mut onehot = vec![0.0; n_loc];
    onehot[order.dest.min(n_loc - 1)] = 1.0;
    x.extend(onehot);
    x
}

/// One accept/reject decision taken during a pass.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderDecision {
    pub features: Vec<f64>,
    pub action: usize,
    pub reward: f64,
}

/// Walks the epoch's orders by increasing direct time. `explore` turns on
/// epsilon-greedy action choice.
fn drl_pass(
    state: &SystemState,
    cands: &CandidateSet,
    env: &Environment,
    net: &DdqnNet,
    variant: Variant,
    mut explore: Option<(f64, &mut ChaCha8Rng)>,
) -> (Assignment, Vec<OrderDecision>) {
    let n = state.couriers.len();
    let now = state.now(&env.params);
    let lookup: Vec<HashMap<&[usize], usize>> = cands
        .per_courier
        .iter()
        .map(|l| l.iter().enumerate().map(|(k, m)| (m.batch.as_slice(), k)).collect())
        .collect();
    let mut order_idx: Vec<usize> = (0..state.orders.len()).collect();
    order_idx.sort_by(|&a, &b| {
        let (oa, ob) = (&state.orders[a], &state.orders[b]);
        env.matrix
            .direct(oa.dest)
            .total_cmp(&env.matrix.direct(ob.dest))
            .then(oa.id.cmp(&ob.id))
    });
    let mut tentative: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut decisions = Vec::with_capacity(order_idx.len());
    for (pos, &o) in order_idx.iter().enumerate() {
        let extra: Vec<usize> = tentative.iter().map(Vec::len).collect();
        let x = ddqn_features(state, &extra, &state.orders[o], order_idx.len() - pos - 1, env);
        let explored = match explore.as_mut() {
            Some((eps, rng)) if *eps > 0.0 => (rng.random::<f64>() < *eps).then(|| rng.random_range(0..2)),
            _ => None,
        };
        let action = match explored {
            Some(a) => a,
            None => {
                let q = net.q(&x);
                if q[ACCEPT] >= q[REJECT] {
                    ACCEPT
                } else {
                    REJECT
                }
            }
        };
        let mut reward = 0.0;
        if action == ACCEPT {
            // Orders are attached one at a time as singleton matches, so a
            // courier already given an order this epoch is not available.
            let pick = variant
                .order(&state.couriers, &extra, now)
                .into_iter()
                .find(|&c| tentative[c].is_empty() && lookup[c].contains_key([o].as_slice()));
            if let Some(c) = pick {
                tentative[c].push(o);
                reward = 1.0;
            }
        }
        decisions.push(OrderDecision { features: x, action, reward });
    }
    let chosen: Vec<usize> = tentative.iter().enumerate().map(|(c, b)| lookup[c][b.as_slice()]).collect();
    let objective = chosen.iter().enumerate().map(|(c, &k)| cands.per_courier[c][k].reward).sum();
    (Assignment { chosen, objective }, decisions)
}

/// Greedy accept/reject pass followed by heuristic courier attachment.
pub fn drl_decide(
    state: &SystemState,
    cands: &CandidateSet,
    env: &Environment,
    net: &DdqnNet,
    variant: Variant,
) -> PolicyDecision {
    let (assignment, _) = drl_pass(state, cands, env, net, variant, None);
    let scores = assignment
        .chosen
        .iter()
        .enumerate()
        .map(|(c, &k)| cands.per_courier[c][k].batch.len() as f64)
        .collect::<Vec<_>>();
    PolicyDecision { assignment, scores }
}

pub struct DrlPolicy {
    pub net: DdqnNet,
    pub variant: Variant,
}

impl Policy for DrlPolicy {
    fn name(&self) -> String {
        format!("drl-{}", self.variant)
    }

    fn decide(&mut self, state: &SystemState, cands: &CandidateSet, env: &Environment) -> Result<PolicyDecision> {
        Ok(drl_decide(state, cands, env, &self.net, self.variant))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DdqnConfig {
    pub episodes: usize,
    pub gamma: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Order decisions between gradient updates.
    pub update_every: usize,
    pub target_every: usize,
    pub eps_start: f64,
    pub eps_end: f64,
    pub eps_decay_fraction: f64,
    pub replay_capacity: usize,
    pub grad_clip: f64,
}

impl Default for DdqnConfig {
    fn default() -> Self {
        Self {
            episodes: 40,
            gamma: 0.9,
            learning_rate: 1e-3,
            batch_size: 32,
            update_every: 4,
            target_every: 200,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_decay_fraction: 0.5,
            replay_capacity: 10_000,
            grad_clip: 10.0,
        }
    }
}

impl DdqnConfig {
    pub fn epsilon(&self, episode: usize) -> f64 {
        let span = self.eps_decay_fraction * self.episodes as f64;
        if span <= 0.0 {
            return self.eps_end;
        }
        let frac = (episode as f64 / span).min(1.0);
        self.eps_start + (self.eps_end - self.eps_start) * frac
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub x: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    /// Features of the next order decision of the day, if any.
    pub next: Option<Vec<f64>>,
}

/// One Double-DQN regression step on `batch`; returns the mean squared
/// TD error before the step.
pub fn ddqn_fit(
    net: &mut DdqnNet,
    target: &DdqnNet,
    opt: &mut Adam,
    batch: &[&Transition],
    gamma: f64,
    grad_clip: f64,
) -> f64 {
    let shape = net.arch.shape();
    let mut grad = vec![0.0; net.params.len()];
    let mut loss = 0.0;
    let b = batch.len() as f64;
    let mut acts = Vec::new();
    for tr in batch {
        let y = tr.reward
            + match &tr.next {
                Some(nx) => {
                    let q_online = net.q(nx);
                    let a = if q_online[ACCEPT] >= q_online[REJECT] { ACCEPT } else { REJECT };
                    gamma * target.q(nx)[a]
                }
                None => 0.0,
            };
        shape.forward(&net.params, &tr.x, &mut acts);
        let q = acts.last().unwrap()[tr.action];
        let err = q - y;
        loss += err * err / b;
        let mut d_out = [0.0; 2];
        d_out[tr.action] = 2.0 * err / b;
        shape.backward(&net.params, &acts, &d_out, &mut grad);
    }
    clip_grad_norm(&mut grad, grad_clip);
    opt.step(&mut net.params, &grad);
    loss
}

/// One line of the DDQN training log, written after every gradient update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdqnLogLine {
    pub episode: usize,
    pub update: usize,
    pub loss: f64,
    pub epsilon: f64,
}

/// Trains the accept/reject network on `days` with epsilon-greedy
/// exploration, uniform replay and a periodically synced target network.
pub fn ddqn_train(
    env: &Environment,
    days: &[DayStream],
    variant: Variant,
    cfg: &DdqnConfig,
    seed: u64,
    log: &mut dyn FnMut(&DdqnLogLine),
) -> Result<DdqnNet> {
    let arch = DdqnArch::new(env.n_couriers(), env.matrix.n_locations());
    let mut net = DdqnNet::new(arch, derive_seed(seed, 11));
    if cfg.episodes == 0 || days.is_empty() {
        return Ok(net);
    }
    if cfg.batch_size == 0 || cfg.update_every == 0 {
        return Err(OdpError::Config("batch_size and update_every must be positive".into()));
    }
    let mut target = net.clone();
    let mut opt = Adam::new(net.params.len(), cfg.learning_rate);
    let mut replay: ReplayBuffer<Transition> = ReplayBuffer::new(ReplayConfig {
        capacity: cfg.replay_capacity,
        alpha: 0.0,
        beta_start: 0.0,
        beta_end: 0.0,
        priority_eps: 1e-3,
    });
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 12));
    let (mut steps, mut updates) = (0usize, 0usize);
    for ep in 0..cfg.episodes {
        let eps = cfg.epsilon(ep);
        let mut episode = Episode::new(env, &days[ep % days.len()]);
        let mut pending: Option<OrderDecision> = None;
        while !episode.is_done() {
            let cands = episode.candidates();
            let (assignment, decisions) = drl_pass(episode.state(), &cands, env, &net, variant, Some((eps, &mut rng)));
            for d in decisions {
                if let Some(prev) = pending.take() {
                    replay.push(Transition {
                        x: prev.features,
                        action: prev.action,
                        reward: prev.reward,
                        next: Some(d.features.clone()),
                    });
                    steps += 1;
                    if steps % cfg.update_every == 0 {
                        if let Some(s) = replay.sample(cfg.batch_size, &mut rng) {
                            let batch: Vec<&Transition> = s.indices.iter().map(|&i| replay.get(i)).collect();
                            let loss = ddqn_fit(&mut net, &target, &mut opt, &batch, cfg.gamma, cfg.grad_clip);
                            updates += 1;
                            if !loss.is_finite() {
                                return Err(OdpError::ModelCorruption(format!(
                                    "non-finite DDQN loss at update {updates} of episode {ep}"
                                )));
                            }
                            log(&DdqnLogLine { episode: ep, update: updates, loss, epsilon: eps });
                            if cfg.target_every > 0 && updates % cfg.target_every == 0 {
                                target.params.copy_from_slice(&net.params);
                            }
                        }
                    }
                }
                pending = Some(d);
            }
            episode.step(&cands, &assignment)?;
        }
        if let Some(prev) = pending.take() {
            replay.push(Transition { x: prev.features, action: prev.action, reward: prev.reward, next: None });
        }
    }
    if net.params.iter().any(|p| !p.is_finite()) {
        return Err(OdpError::ModelCorruption("DDQN parameters became non-finite".into()));
    }
    Ok(net)
}
