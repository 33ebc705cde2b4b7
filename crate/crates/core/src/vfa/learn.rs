//! Scoring, Bellman targets, gradient updates and target-network handling.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::features::{candidate_features, FeatureVector};
use super::net::{ValueArch, ValueNet};
use super::nn::{add_gaussian_noise, clip_grad_norm, polyak, Adam};
use crate::error::{OdpError, Result};
use crate::feasibility::CandidateSet;
use crate::matching::solve_matching;
use crate::sim::{Environment, SystemState};

/// Anything that maps post-decision features to a value in reward units.
pub trait ValueFunction {
    fn value(&self, f: &FeatureVector) -> Result<f64>;
}

impl ValueFunction for ValueNet {
    fn value(&self, f: &FeatureVector) -> Result<f64> {
        ValueNet::value(self, f)
    }
}

/// One value evaluation per feature vector.
pub fn score_features<V: ValueFunction + ?Sized>(v: &V, feats: &[Vec<FeatureVector>]) -> Result<Vec<Vec<f64>>> {
    feats
        .iter()
        .map(|row| row.iter().map(|f| v.value(f)).collect())
        .collect()
}

/// Value of every candidate's post-decision state.
pub fn score_candidates<V: ValueFunction + ?Sized>(
    v: &V,
    state: &SystemState,
    cands: &CandidateSet,
    env: &Environment,
) -> Result<Vec<Vec<f64>>> {
    score_features(v, &candidate_features(state, cands, env))
}

/// The decision epoch following a stored transition, kept in full so
/// targets can be recomputed with the current networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextEpoch {
    /// Candidate set with routes stripped; rewards and batches retained.
    pub cands: CandidateSet,
    pub features: Vec<Vec<FeatureVector>>,
    /// False when the next epoch is the last of the horizon.
    pub bootstrap: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experience {
    pub t: usize,
    /// Post-decision features of the candidate each courier took.
    pub features: Vec<FeatureVector>,
    /// `None` for the final epoch of a day.
    pub next: Option<NextEpoch>,
}

impl NextEpoch {
    pub fn new(mut cands: CandidateSet, features: Vec<Vec<FeatureVector>>, bootstrap: bool) -> Self {
        cands.per_courier.iter_mut().flatten().for_each(|m| m.route = None);
        Self {
            cands,
            features,
            bootstrap,
        }
    }
}

/// Double-Q targets, one per courier of `exp`.
///
/// The prediction network picks next-epoch actions through the matching
/// program; the target network values the picked post-decision states.
pub fn bellman_targets<T: ValueFunction + ?Sized, P: ValueFunction + ?Sized>(
    target: &T,
    prediction: &P,
    exp: &Experience,
    gamma: f64,
) -> Result<Vec<f64>> {
    let Some(next) = &exp.next else {
        return Ok(vec![0.0; exp.features.len()]);
    };
    let boot = next.bootstrap && gamma != 0.0;
    let scores: Vec<Vec<f64>> = if boot {
        score_features(prediction, &next.features)?
            .into_iter()
            .map(|row| row.into_iter().map(|v| gamma * v).collect())
            .collect()
    } else {
        next.features.iter().map(|row| vec![0.0; row.len()]).collect()
    };
    let chosen = solve_matching(&next.cands, &scores)?.chosen;
    chosen
        .iter()
        .enumerate()
        .map(|(c, &k)| {
            let r = next.cands.per_courier[c][k].reward;
            if boot {
                Ok(r + gamma * target.value(&next.features[c][k])?)
            } else {
                Ok(r)
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TargetSync {
    /// Copy every `every` updates.
    Hard { every: usize },
    /// Blend after every update.
    Polyak { tau: f64 },
}

pub fn sync_target(prediction: &ValueNet, target: &mut ValueNet, tau: f64) -> Result<()> {
    if !prediction.same_arch(target) {
        return Err(OdpError::ArchitectureMismatch(
            "prediction and target networks differ in architecture".into(),
        ));
    }
    polyak(&mut target.params, &prediction.params, tau);
    Ok(())
}

/// Copy of `net` with N(0, sigma^2) noise on every parameter.
pub fn perturb_for_exploration(net: &ValueNet, sigma: f64, seed: u64) -> ValueNet {
    let mut copy = net.clone();
    add_gaussian_noise(&mut copy.params, sigma, &mut ChaCha8Rng::seed_from_u64(seed));
    copy
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateResult {
    pub loss: f64,
    /// Mean absolute TD error per experience, in network output units.
    pub td: Vec<f64>,
}

/// One importance-weighted squared-error step. `targets[i][c]` is the
/// target for courier `c` of `batch[i]`, in reward units.
pub fn update(
    net: &mut ValueNet,
    opt: &mut Adam,
    batch: &[&Experience],
    targets: &[Vec<f64>],
    weights: &[f64],
    grad_clip: f64,
) -> Result<UpdateResult> {
    if batch.is_empty() {
        return Err(OdpError::Contract("empty minibatch".into()));
    }
    let scale = net.arch.value_scale;
    let mut grad = vec![0.0; net.n_params()];
    let mut loss = 0.0;
    let mut td = Vec::with_capacity(batch.len());
    let b = batch.len() as f64;
    for ((exp, ys), &w) in batch.iter().zip(targets).zip(weights) {
        let n = exp.features.len().max(1) as f64;
        let mut abs_td = 0.0;
        for (f, &y) in exp.features.iter().zip(ys) {
            let (out, trace) = net.forward_trace(f);
            let err = out - y / scale;
            loss += w * err * err / (n * b);
            abs_td += err.abs() / n;
            net.backward(&trace, 2.0 * w * err / (n * b), &mut grad);
        }
        td.push(abs_td);
    }
    if !loss.is_finite() {
        return Err(OdpError::ModelCorruption(format!(
            "non-finite loss {loss}; targets {targets:?}; weights {weights:?}; parameter hash {}",
            net.param_hash()
        )));
    }
    clip_grad_norm(&mut grad, grad_clip);
    opt.step(&mut net.params, &grad);
    Ok(UpdateResult { loss, td })
}

const CHECKPOINT_FORMAT: &str = "odp-params";
const CHECKPOINT_VERSION: u32 = 1;

/// Parameter file: architecture header, flat parameters and their hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub kind: String,
    pub arch: serde_json::Value,
    pub param_hash: String,
    #[serde(default)]
    pub meta: serde_json::Value,
    pub params: Vec<f64>,
}

pub fn params_hash(params: &[f64]) -> String {
    let mut h = Sha256::new();
    for p in params {
        h.update(p.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

impl Checkpoint {
    pub fn new<A: Serialize>(kind: &str, arch: &A, params: &[f64], meta: serde_json::Value) -> Result<Self> {
        Ok(Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            kind: kind.into(),
            arch: serde_json::to_value(arch)?,
            param_hash: params_hash(params),
            meta,
            params: params.to_vec(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?).map_err(|e| OdpError::io(path, e))
    }

    /// Reads and verifies a checkpoint of the given kind.
    pub fn load(path: &Path, kind: &str) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| OdpError::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(OdpError::ArchitectureMismatch(format!(
                "{}: unsupported checkpoint format {} v{}",
                path.display(),
                ck.format,
                ck.version
            )));
        }
        if ck.kind != kind {
            return Err(OdpError::ArchitectureMismatch(format!(
                "{}: checkpoint holds a {} model, expected {kind}",
                path.display(),
                ck.kind
            )));
        }
        if params_hash(&ck.params) != ck.param_hash {
            return Err(OdpError::ModelCorruption(format!("{}: parameter hash mismatch", path.display())));
        }
        Ok(ck)
    }
}

pub const NEURADP_KIND: &str = "neuradp-value";

pub fn save_value_net(path: &Path, net: &ValueNet, meta: serde_json::Value) -> Result<()> {
    Checkpoint::new(NEURADP_KIND, &net.arch, &net.params, meta)?.save(path)
}

/// Loads a value network, failing if its architecture differs from
/// `expected` (when given) or its parameter count does not fit.
pub fn load_value_net(path: &Path, expected: Option<&ValueArch>) -> Result<ValueNet> {
    let ck = Checkpoint::load(path, NEURADP_KIND)?;
    let arch: ValueArch = serde_json::from_value(ck.arch)?;
    if let Some(e) = expected {
        if *e != arch {
            return Err(OdpError::ArchitectureMismatch(format!(
                "{}: checkpoint architecture {arch:?} does not match {e:?}",
                path.display()
            )));
        }
    }
    let fresh = ValueNet::new(arch.clone(), 0);
    if fresh.n_params() != ck.params.len() {
        return Err(OdpError::ArchitectureMismatch(format!(
            "{}: {} parameters for an architecture needing {}",
            path.display(),
            ck.params.len(),
            fresh.n_params()
        )));
    }
    Ok(ValueNet { arch, params: ck.params })
}
