use serde::{Deserialize, Serialize};

use crate::feasibility::MatchCandidate;
use crate::sim::{advance_courier, Courier, Environment, SimParams, SystemState, TransitionEvents};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueueItem {
    pub dest: usize,
    /// Deadline minus planned drop time, minutes.
    pub slack: f64,
}

/// Inputs of the per-courier value function, in raw units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub queue: Vec<QueueItem>,
    pub ret: f64,
    pub to_shift_end: f64,
    pub at_depot: bool,
    /// Epoch of the post-decision state over the horizon, in [0, 1].
    pub time: f64,
    pub others_off_shift: f64,
    pub others_at_depot: f64,
    /// Mean of (orders held / queue_max) over the other couriers.
    pub others_occupancy: f64,
    pub arrivals: f64,
}

/// Pre-decision fleet totals from which each courier's view of the others
/// is obtained by removing itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FleetSummary {
    n: usize,
    off_shift: usize,
    at_depot: usize,
    occupancy: f64,
    arrivals: usize,
}

fn courier_flags(c: &Courier, now: f64, p: &SimParams) -> (bool, bool, f64) {
    let on = c.on_shift(now, p.shift_length);
    (!on, on && c.at_depot(now), c.load() as f64 / p.queue_max as f64)
}

impl FleetSummary {
    pub fn new(state: &SystemState, params: &SimParams) -> Self {
        let now = state.now(params);
        let mut s = Self {
            n: state.couriers.len(),
            off_shift: 0,
            at_depot: 0,
            occupancy: 0.0,
            arrivals: state.orders.len(),
        };
        for c in &state.couriers {
            let (off, depot, occ) = courier_flags(c, now, params);
            s.off_shift += off as usize;
            s.at_depot += depot as usize;
            s.occupancy += occ;
        }
        s
    }

    /// (off shift, at depot, mean occupancy) of everyone but `me`.
    fn others(&self, me: &Courier, now: f64, params: &SimParams) -> (f64, f64, f64) {
        let (off, depot, occ) = courier_flags(me, now, params);
        let others = self.n.saturating_sub(1);
        let mean_occ = if others == 0 {
            0.0
        } else {
            ((self.occupancy - occ) / others as f64).max(0.0)
        };
        (
            (self.off_shift - off as usize) as f64,
            (self.at_depot - depot as usize) as f64,
            mean_occ,
        )
    }
}

/// The courier after taking `cand` at epoch `t` and moving forward one
/// epoch, before the next arrivals.
pub fn post_decision_courier(courier: &Courier, cand: &MatchCandidate, t: usize, env: &Environment) -> Courier {
    let p = &env.params;
    let mut c = courier.clone();
    if let Some(route) = &cand.route {
        c.queue = Some(route.clone());
    }
    let mut sink = TransitionEvents::default();
    advance_courier(cand.courier, &mut c, p.epoch_time(t), p.epoch_minutes, p.shift_length, &mut sink);
    c
}

/// Features of a post-decision courier. `pre` is the same courier before
/// the decision, used to remove it from the fleet totals.
pub fn featurize(post: &Courier, pre: &Courier, fleet: &FleetSummary, t: usize, params: &SimParams) -> FeatureVector {
    let now_pre = params.epoch_time(t);
    let now = params.epoch_time(t + 1);
    let queue = post
        .queue
        .as_ref()
        .map(|plan| {
            plan.sequence
                .iter()
                .zip(&plan.drop_times)
                .map(|(o, drop)| QueueItem {
                    dest: o.dest,
                    slack: (o.dead - drop).max(0.0),
                })
                .collect()
        })
        .unwrap_or_default();
    let (off, depot, occ) = fleet.others(pre, now_pre, params);
    FeatureVector {
        queue,
        ret: post.ret(now),
        to_shift_end: (post.shift_end(params.shift_length) - now).max(0.0),
        at_depot: post.at_depot(now) && post.trip.is_none(),
        time: ((t + 1) as f64 / params.horizon_epochs as f64).min(1.0),
        others_off_shift: off,
        others_at_depot: depot,
        others_occupancy: occ,
        arrivals: fleet.arrivals as f64,
    }
}

/// Post-decision features of every candidate, grouped like the candidate
/// set.
pub fn candidate_features(
    state: &SystemState,
    cands: &crate::feasibility::CandidateSet,
    env: &Environment,
) -> Vec<Vec<FeatureVector>> {
    let fleet = FleetSummary::new(state, &env.params);
    cands
        .per_courier
        .iter()
        .enumerate()
        .map(|(c, list)| {
            let pre = &state.couriers[c];
            list.iter()
                .map(|cand| {
                    let post = post_decision_courier(pre, cand, state.t, env);
                    featurize(&post, pre, &fleet, state.t, &env.params)
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feasibility::{feasible_matches, RoutePlan};
    use crate::geo::{build_travel_times, generate_city};
    use crate::sim::{order_deadline, Order, ShiftPlan};

    fn env(n: usize) -> Environment {
        let p = SimParams::default();
        let city = generate_city(10, 4.0, 2, 8).unwrap();
        let m = build_travel_times(&city, 20.0, 0.1, 8).unwrap();
        let shifts = ShiftPlan::new(vec![0.0; n], p.shift_length, p.horizon_minutes()).unwrap();
        Environment::new(m, p, shifts).unwrap()
    }

    #[test]
    fn idle_courier_at_depot() {
        let env = env(2);
        let state = SystemState { t: 4, couriers: env.initial_couriers(), orders: vec![] };
        let f = &candidate_features(&state, &feasible_matches(&state, &env), &env)[0][0];
        assert!(f.queue.is_empty());
        assert_eq!(f.ret, 0.0);
        assert!(f.at_depot);
        assert_eq!(f.to_shift_end, 360.0 - 25.0);
        assert_eq!(f.others_at_depot, 1.0);
    }

    #[test]
    fn identical_couriers_share_features() {
        let env = env(3);
        let state = SystemState { t: 4, couriers: env.initial_couriers(), orders: vec![] };
        let feats = candidate_features(&state, &feasible_matches(&state, &env), &env);
        assert_eq!(feats[0][0], feats[1][0]);
        assert_eq!(feats[1][0], feats[2][0]);
    }

    #[test]
    fn slack_matches_recomputed_drop_times() {
        let env = env(1);
        let m = &env.matrix;
        // Courier away until minute 30 with two queued orders.
        let mut c = Courier::new(0.0);
        c.return_at = 30.0;
        c.trip = Some(crate::sim::Trip { depart: 10.0, return_at: 30.0, pending: vec![], size: 1 });
        let orders: Vec<Order> = [(1u64, 3usize), (2, 5)]
            .iter()
            .map(|&(id, dest)| Order { id, dest, dead: order_deadline(20.0, dest, m, 40.0), epoch: 4 })
            .collect();
        c.queue = Some(RoutePlan::forward(orders.clone(), 30.0, m));
        let state = SystemState { t: 4, couriers: vec![c.clone()], orders: vec![] };
        let f = &candidate_features(&state, &feasible_matches(&state, &env), &env)[0][0];
        // Independent recomputation of the two drop instants.
        let d1 = 30.0 + m.get(0, 3);
        let d2 = d1 + m.get(3, 5);
        assert_eq!(f.queue.len(), 2);
        assert!((f.queue[0].slack - (orders[0].dead - d1)).abs() < 1e-12);
        assert!((f.queue[1].slack - (orders[1].dead - d2)).abs() < 1e-12);
        assert_eq!(f.ret, 30.0 - 25.0);
        assert!(!f.at_depot);
    }
}
