//! Dispatching policies behind one interface.

mod drl;
mod myopic;
mod neuradp;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use drl::{ddqn_features, ddqn_train, DdqnArch, DdqnLogLine, drl_decide, DdqnConfig, DdqnNet, DrlPolicy, DDQN_KIND};
pub use myopic::{myopic_decide, MyopicPolicy};
pub use neuradp::{neuradp_decide, NeurAdpPolicy};

use crate::error::{OdpError, Result};
use crate::feasibility::CandidateSet;
use crate::matching::Assignment;
use crate::sim::{Courier, Environment, SystemState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyDecision {
    pub assignment: Assignment,
    /// Score the policy attached to each courier's chosen candidate.
    pub scores: Vec<f64>,
}

pub trait Policy {
    fn name(&self) -> String;
    fn decide(&mut self, state: &SystemState, cands: &CandidateSet, env: &Environment) -> Result<PolicyDecision>;
}

/// Courier ordering used by the heuristic baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Closest first: smallest time to depot.
    DC,
    /// Farthest first.
    DF,
    /// Emptiest first.
    CE,
    /// Fullest first.
    CF,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::DC, Variant::DF, Variant::CE, Variant::CF];

    /// Courier indices in this variant's priority order; `extra[c]` counts
    /// orders tentatively added to courier `c`. Ties keep index order.
    pub fn order(self, couriers: &[Courier], extra: &[usize], now: f64) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..couriers.len()).collect();
        let occ = |c: usize| couriers[c].load() + extra[c];
        match self {
            Variant::DC => idx.sort_by(|&a, &b| couriers[a].ret(now).total_cmp(&couriers[b].ret(now))),
            Variant::DF => idx.sort_by(|&a, &b| couriers[b].ret(now).total_cmp(&couriers[a].ret(now))),
            Variant::CE => idx.sort_by_key(|&c| occ(c)),
            Variant::CF => idx.sort_by_key(|&c| std::cmp::Reverse(occ(c))),
        }
        idx
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Variant::DC => "dc",
            Variant::DF => "df",
            Variant::CE => "ce",
            Variant::CF => "cf",
        };
        f.write_str(s)
    }
}

impl FromStr for Variant {
    type Err = OdpError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dc" => Ok(Variant::DC),
            "df" => Ok(Variant::DF),
            "ce" => Ok(Variant::CE),
            "cf" => Ok(Variant::CF),
            other => Err(OdpError::Config(format!("unknown courier ordering {other:?}"))),
        }
    }
}

/// Policy names as used on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PolicyKind {
    NeurAdp,
    Myopic(Variant),
    Drl(Variant),
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicyKind::NeurAdp => f.write_str("neuradp"),
            PolicyKind::Myopic(v) => write!(f, "myopic-{v}"),
            PolicyKind::Drl(v) => write!(f, "drl-{v}"),
        }
    }
}

impl FromStr for PolicyKind {
    type Err = OdpError;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.to_ascii_lowercase();
        if s == "neuradp" {
            return Ok(PolicyKind::NeurAdp);
        }
        match s.split_once('-') {
            Some(("myopic", v)) => Ok(PolicyKind::Myopic(v.parse()?)),
            Some(("drl", v)) => Ok(PolicyKind::Drl(v.parse()?)),
            _ => Err(OdpError::Config(format!(
                "unknown policy {s:?}; expected neuradp, myopic-<dc|df|ce|cf> or drl-<dc|df|ce|cf>"
            ))),
        }
    }
}
