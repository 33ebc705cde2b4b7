use serde::{Deserialize, Serialize};

use super::{ArrivalProfile, SimParams};
use crate::error::{OdpError, Result};

/// Granularity of shift start times, minutes.
const START_BUCKET_MINUTES: f64 = 60.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftPlan {
    pub shift_starts: Vec<f64>,
    pub shift_length: f64,
}

impl ShiftPlan {
    pub fn new(shift_starts: Vec<f64>, shift_length: f64, horizon_minutes: f64) -> Result<Self> {
        for &s in &shift_starts {
            if s < 0.0 || s + shift_length > horizon_minutes {
                return Err(OdpError::Config(format!(
                    "shift starting at {s} does not fit a {horizon_minutes}-minute horizon"
                )));
            }
        }
        Ok(Self {
            shift_starts,
            shift_length,
        })
    }

    pub fn n_couriers(&self) -> usize {
        self.shift_starts.len()
    }

    /// Couriers on duty at absolute minute `time`.
    pub fn on_duty(&self, time: f64) -> usize {
        self.shift_starts
            .iter()
            .filter(|&&s| s <= time && time < s + self.shift_length)
            .count()
    }
}

/// Staffs `n_couriers` shifts so the on-duty headcount follows demand.
///
/// Each hourly start slot is weighted by the mean demand over the shift it
/// would cover; couriers are then placed at the weighted quantiles
/// `(k + 1/2) / n` of those slot weights (systematic proportional
/// allocation), which spreads a flat profile evenly across the day.
pub fn build_shift_plan(
    n_couriers: usize,
    profile: &ArrivalProfile,
    params: &SimParams,
) -> Result<ShiftPlan> {
    if n_couriers == 0 {
        return Err(OdpError::Config("at least one courier is required".into()));
    }
    let horizon = params.horizon_minutes();
    if params.shift_length > horizon {
        return Err(OdpError::Config("shift longer than the horizon".into()));
    }
    let last_start = horizon - params.shift_length;
    let n_slots = (last_start / START_BUCKET_MINUTES).floor() as usize + 1;
    let slots: Vec<f64> = (0..n_slots).map(|k| k as f64 * START_BUCKET_MINUTES).collect();

    let mut weights: Vec<f64> = slots
        .iter()
        .map(|&s| {
            let first = (s / params.epoch_minutes).floor() as usize;
            let last = (((s + params.shift_length) / params.epoch_minutes).ceil() as usize)
                .min(params.horizon_epochs);
            let covered = &profile.means[first.min(profile.epochs())..last.min(profile.epochs())];
            if covered.is_empty() {
                0.0
            } else {
                covered.iter().sum::<f64>() / covered.len() as f64
            }
        })
        .collect();
    if weights.iter().sum::<f64>() <= 0.0 {
        weights.iter_mut().for_each(|w| *w = 1.0);
    }
    let total: f64 = weights.iter().sum();
    let mut cumulative = Vec::with_capacity(n_slots);
    let mut acc = 0.0;
    for w in &weights {
        acc += w;
        cumulative.push(acc);
    }
    let starts = (0..n_couriers)
        .map(|k| {
            let q = (k as f64 + 0.5) / n_couriers as f64 * total;
            let idx = cumulative.partition_point(|&c| c < q).min(n_slots - 1);
            slots[idx]
        })
        .collect();
    ShiftPlan::new(starts, params.shift_length, horizon)
}
