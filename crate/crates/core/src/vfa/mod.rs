//! Neural approximation of per-courier post-decision values and its
//! training machinery.

mod features;
mod learn;
mod net;
pub mod nn;
mod replay;
mod train;

pub use features::{candidate_features, featurize, post_decision_courier, FeatureVector, FleetSummary, QueueItem};
pub use learn::{
    bellman_targets, load_value_net, params_hash, perturb_for_exploration, save_value_net, score_candidates,
    score_features, sync_target, update, Checkpoint, Experience, NextEpoch, TargetSync, UpdateResult,
    ValueFunction, NEURADP_KIND,
};
pub use net::{Trace, ValueArch, ValueNet};
pub use replay::{ReplayBuffer, ReplayConfig, Sampled};
pub use train::{train_neuradp, Learner, TrainConfig, TrainLogLine};
