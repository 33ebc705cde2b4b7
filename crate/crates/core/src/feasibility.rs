//! Feasible courier/batch matches.
//!
//! A batch is any non-empty subset of the epoch's orders. Matching it to a
//! courier requires the courier to be on shift, the combined queue to fit
//! `queue_max`, and some delivery sequence of the combined queue to meet
//! every deadline and bring the courier back before its shift ends. Among
//! feasible sequences the one returning earliest is kept.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::geo::{TravelTimeMatrix, DEPOT};
use crate::sim::{courier_reward, Courier, Environment, Order, SimParams, SystemState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutePlan {
    pub sequence: Vec<Order>,
    /// Depot departure instant.
    pub depart: f64,
    pub drop_times: Vec<f64>,
    pub return_time: f64,
}

impl RoutePlan {
    /// Forward drop-time recursion for a fixed sequence leaving the depot at
    /// `depart`.
    pub fn forward(sequence: Vec<Order>, depart: f64, matrix: &TravelTimeMatrix) -> Self {
        let mut clock = depart;
        let mut here = DEPOT;
        let mut drop_times = Vec::with_capacity(sequence.len());
        for o in &sequence {
            clock += matrix.get(here, o.dest);
            here = o.dest;
            drop_times.push(clock);
        }
        let return_time = clock + matrix.get(here, DEPOT);
        Self {
            sequence,
            depart,
            drop_times,
            return_time,
        }
    }

    /// Minutes from depot departure back to the depot.
    pub fn duration(&self) -> f64 {
        self.return_time - self.depart
    }
}

/// One option for one courier: take `batch` (indices into the epoch's
/// orders) and follow `route`. The empty batch with no route is the null
/// action, which keeps the courier's existing plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchCandidate {
    pub courier: usize,
    pub batch: Vec<usize>,
    pub route: Option<RoutePlan>,
    pub reward: f64,
}

impl MatchCandidate {
    pub fn null(courier: usize) -> Self {
        Self {
            courier,
            batch: Vec::new(),
            route: None,
            reward: 0.0,
        }
    }

    pub fn is_null(&self) -> bool {
        self.batch.is_empty()
    }
}

/// The feasible match set of an epoch, grouped by courier. Index 0 of every
/// courier's list is its null candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub per_courier: Vec<Vec<MatchCandidate>>,
    pub n_orders: usize,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.per_courier.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.per_courier.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &MatchCandidate> {
        self.per_courier.iter().flatten()
    }
}

/// All subsets of `0..n_orders` with between 1 and `max_size` elements, by
/// size and then lexicographically.
pub fn enumerate_batches(n_orders: usize, max_size: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for size in 1..=max_size.min(n_orders) {
        let mut idx: Vec<usize> = (0..size).collect();
        loop {
            out.push(idx.clone());
            // advance to next combination
            let mut i = size;
            while i > 0 && idx[i - 1] == n_orders - size + i - 1 {
                i -= 1;
            }
            if i == 0 {
                break;
            }
            idx[i - 1] += 1;
            for j in i..size {
                idx[j] = idx[j - 1] + 1;
            }
        }
    }
    out
}

fn next_permutation(p: &mut [usize]) -> bool {
    if p.len() < 2 {
        return false;
    }
    let mut i = p.len() - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = p.len() - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// Best feasible route for `courier` taking `batch` at absolute minute
/// `now`, or `None` if the match violates any shift, capacity, deadline or
/// return constraint.
///
/// All permutations of queue plus batch are tried; the earliest return
/// wins, ties going to the lexicographically smallest order-id sequence.
pub fn check_match(
    courier: &Courier,
    batch: &[Order],
    now: f64,
    matrix: &TravelTimeMatrix,
    params: &SimParams,
) -> Option<RoutePlan> {
    let shift_end = courier.shift_end(params.shift_length);
    if courier.shift_start > now || shift_end <= now {
        return None;
    }
    let queued = courier.queued_orders();
    if queued.len() + batch.len() > params.queue_max {
        return None;
    }
    let mut combined: Vec<Order> = queued.iter().chain(batch).copied().collect();
    if combined.is_empty() {
        return None;
    }
    combined.sort_by_key(|o| o.id);
    let depart = now.max(courier.return_at);

    let mut perm: Vec<usize> = (0..combined.len()).collect();
    let mut best: Option<(f64, Vec<usize>)> = None;
    loop {
        let mut clock = depart;
        let mut here = DEPOT;
        let mut ok = true;
        for &k in &perm {
            let o = &combined[k];
            clock += matrix.get(here, o.dest);
            here = o.dest;
            if clock > o.dead {
                ok = false;
                break;
            }
        }
        if ok {
            let back = clock + matrix.get(here, DEPOT);
            if back < shift_end && best.as_ref().is_none_or(|(b, _)| back < *b) {
                best = Some((back, perm.clone()));
            }
        }
        if !next_permutation(&mut perm) {
            break;
        }
    }
    best.map(|(_, p)| RoutePlan::forward(p.iter().map(|&k| combined[k]).collect(), depart, matrix))
}

/// Enumerates the feasible match set of `state`.
///
/// When the travel-time matrix satisfies the triangle inequality, a batch is
/// only checked if all its one-smaller subsets were feasible: dropping a
/// stop from a feasible route can then only make it earlier.
pub fn feasible_matches(state: &SystemState, env: &Environment) -> CandidateSet {
    let params = &env.params;
    let now = state.now(params);
    let prune = env.matrix.is_metric();
    let per_courier = state
        .couriers
        .iter()
        .enumerate()
        .map(|(c, courier)| {
            let mut list = vec![MatchCandidate::null(c)];
            if !courier.on_shift(now, params.shift_length) || state.orders.is_empty() {
                return list;
            }
            let room = params.queue_max.saturating_sub(courier.queue_len());
            let mut feasible: HashSet<Vec<usize>> = HashSet::new();
            for batch in enumerate_batches(state.orders.len(), room) {
                if prune && batch.len() > 1 {
                    let all_subsets_ok = (0..batch.len()).all(|skip| {
                        let sub: Vec<usize> = batch
                            .iter()
                            .enumerate()
                            .filter(|&(i, _)| i != skip)
                            .map(|(_, &o)| o)
                            .collect();
                        feasible.contains(&sub)
                    });
                    if !all_subsets_ok {
                        continue;
                    }
                }
                let orders: Vec<Order> = batch.iter().map(|&i| state.orders[i]).collect();
                if let Some(route) = check_match(courier, &orders, now, &env.matrix, params) {
                    let reward = courier_reward(courier, &route, batch.len(), env.beta);
                    if prune {
                        feasible.insert(batch.clone());
                    }
                    list.push(MatchCandidate {
                        courier: c,
                        batch,
                        route: Some(route),
                        reward,
                    });
                }
            }
            list
        })
        .collect();
    CandidateSet {
        per_courier,
        n_orders: state.orders.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{build_travel_times, generate_city};
    use crate::sim::{order_deadline, ShiftPlan, Trip};
    use proptest::prelude::*;

    fn binom(n: usize, k: usize) -> usize {
        (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
    }

    #[test]
    fn batch_counts() {
        assert_eq!(enumerate_batches(3, 2).len(), 6);
        assert!(enumerate_batches(0, 3).is_empty());
        let expected: usize = (1..=3).map(|k| binom(5, k)).sum();
        assert_eq!(expected, 25);
        assert_eq!(enumerate_batches(5, 3).len(), expected);
        let b = enumerate_batches(3, 2);
        assert_eq!(b, vec![vec![0], vec![1], vec![2], vec![0, 1], vec![0, 2], vec![1, 2]]);
    }

    fn params() -> SimParams {
        SimParams::default()
    }

    fn matrix() -> TravelTimeMatrix {
        let city = generate_city(8, 4.0, 2, 21).unwrap();
        build_travel_times(&city, 20.0, 0.1, 21).unwrap()
    }

    #[test]
    fn off_shift_courier_is_infeasible() {
        let m = matrix();
        let o = Order { id: 0, dest: 1, dead: 1e9, epoch: 0 };
        let early = Courier::new(600.0);
        assert!(check_match(&early, &[o], 300.0, &m, &params()).is_none());
        let done = Courier::new(0.0);
        assert!(check_match(&done, &[o], 360.0, &m, &params()).is_none());
    }

    #[test]
    fn zero_slack_single_order_takes_direct_route() {
        let m = matrix();
        let now = 100.0;
        let o = Order { id: 3, dest: 4, dead: order_deadline(now, 4, &m, 0.0), epoch: 20 };
        let plan = check_match(&Courier::new(0.0), &[o], now, &m, &params()).expect("feasible");
        assert_eq!(plan.drop_times, vec![now + m.direct(4)]);
        assert_eq!(plan.return_time, now + m.direct(4) + m.get(4, 0));
    }

    #[test]
    fn capacity_gate() {
        let m = matrix();
        let orders: Vec<Order> = (0..4).map(|i| Order { id: i, dest: 1 + i as usize, dead: 1e9, epoch: 0 }).collect();
        let mut p = params();
        p.shift_length = 1e6;
        assert!(check_match(&Courier::new(0.0), &orders, 0.0, &m, &p).is_none());
        assert!(check_match(&Courier::new(0.0), &orders[..3], 0.0, &m, &p).is_some());
    }

    /// From-scratch oracle: every permutation via recursion, constraints
    /// re-derived independently.
    pub(crate) fn oracle(courier: &Courier, batch: &[Order], now: f64, m: &TravelTimeMatrix, p: &SimParams) -> Option<f64> {
        let on = courier.shift_start <= now && now < courier.shift_start + p.shift_length;
        let all: Vec<Order> = courier.queued_orders().iter().chain(batch).copied().collect();
        if !on || all.is_empty() || all.len() > p.queue_max {
            return None;
        }
        let start = if courier.return_at > now { courier.return_at } else { now };
        fn rec(left: &mut Vec<Order>, here: usize, clock: f64, m: &TravelTimeMatrix, best: &mut Option<f64>, end: f64) {
            if left.is_empty() {
                let back = clock + m.get(here, 0);
                if back < end && best.is_none_or(|b| back < b) {
                    *best = Some(back);
                }
                return;
            }
            for i in 0..left.len() {
                let o = left.remove(i);
                let arrive = clock + m.get(here, o.dest);
                if arrive <= o.dead {
                    rec(left, o.dest, arrive, m, best, end);
                }
                left.insert(i, o);
            }
        }
        let mut best = None;
        let mut left = all;
        rec(&mut left, 0, start, m, &mut best, courier.shift_start + p.shift_length);
        best
    }

    #[test]
    fn three_order_queue_matches_permutation_oracle() {
        let m = matrix();
        let now = 60.0;
        let orders: Vec<Order> = (0..3)
            .map(|i| Order { id: i, dest: 2 + i as usize, dead: order_deadline(now, 2 + i as usize, &m, 25.0), epoch: 12 })
            .collect();
        let plan = check_match(&Courier::new(0.0), &orders, now, &m, &params());
        let want = oracle(&Courier::new(0.0), &orders, now, &m, &params());
        assert_eq!(plan.as_ref().map(|p| p.return_time), want);
        assert!(plan.is_some());
    }

    #[test]
    fn ties_break_to_lexicographic_sequence() {
        // Symmetric square: both directions around the loop take the same time.
        let m = TravelTimeMatrix::from_rows(vec![
            vec![0.0, 1.0, 1.0],
            vec![1.0, 0.0, 1.0],
            vec![1.0, 1.0, 0.0],
        ])
        .unwrap();
        let orders = [
            Order { id: 9, dest: 1, dead: 100.0, epoch: 0 },
            Order { id: 4, dest: 2, dead: 100.0, epoch: 0 },
        ];
        let plan = check_match(&Courier::new(0.0), &orders, 0.0, &m, &params()).unwrap();
        let ids: Vec<u64> = plan.sequence.iter().map(|o| o.id).collect();
        assert_eq!(ids, vec![4, 9]);
    }

    fn small_env(couriers: usize) -> Environment {
        let p = params();
        let shifts = ShiftPlan::new(vec![0.0; couriers], p.shift_length, p.horizon_minutes()).unwrap();
        Environment::new(matrix(), p, shifts).unwrap()
    }

    #[test]
    fn no_orders_gives_only_null_candidates() {
        let env = small_env(3);
        let state = SystemState { t: 2, couriers: env.initial_couriers(), orders: vec![] };
        let set = feasible_matches(&state, &env);
        assert_eq!(set.len(), 3);
        assert!(set.iter().all(MatchCandidate::is_null));
    }

    #[test]
    fn candidate_count_matches_independent_filter() {
        let env = small_env(3);
        let now = 50.0;
        let orders: Vec<Order> = (0..5)
            .map(|i| {
                let dest = 1 + (i as usize * 3) % 7;
                Order { id: i, dest, dead: order_deadline(now, dest, &env.matrix, 8.0), epoch: 10 }
            })
            .collect();
        let mut couriers = env.initial_couriers();
        couriers[1].return_at = 55.0;
        couriers[1].trip = Some(Trip { depart: 30.0, return_at: 55.0, pending: vec![], size: 1 });
        couriers[2].shift_start = 400.0;
        let state = SystemState { t: 10, couriers, orders: orders.clone() };
        let set = feasible_matches(&state, &env);
        let mut count = 0;
        for c in &state.couriers {
            count += 1;
            for b in enumerate_batches(orders.len(), env.params.queue_max) {
                let batch: Vec<Order> = b.iter().map(|&i| orders[i]).collect();
                if oracle(c, &batch, now, &env.matrix, &env.params).is_some() {
                    count += 1;
                }
            }
        }
        assert_eq!(set.len(), count);
        for (c, list) in set.per_courier.iter().enumerate() {
            assert!(list[0].is_null() && list[0].courier == c);
        }
    }

    fn arb_case() -> impl Strategy<Value = (u64, Vec<(usize, f64)>, usize, f64, f64, f64)> {
        (
            any::<u64>(),
            prop::collection::vec((1usize..8, 0.0f64..20.0), 1..=4),
            0usize..=2,
            0.0f64..300.0,
            0.0f64..15.0,
            0.0f64..200.0,
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]

        #[test]
        fn check_match_agrees_with_oracle((seed, spec, n_queued, now, ret, shift_start) in arb_case()) {
            let city = generate_city(8, 4.0, 2, seed).unwrap();
            let m = build_travel_times(&city, 20.0, 0.1, seed).unwrap();
            let p = params();
            let orders: Vec<Order> = spec.iter().enumerate()
                .map(|(i, &(dest, slack))| Order { id: i as u64, dest, dead: now + m.direct(dest) + slack, epoch: 0 })
                .collect();
            let n_queued = n_queued.min(orders.len() - 1);
            let mut courier = Courier::new(shift_start);
            courier.return_at = now + ret;
            if n_queued > 0 {
                courier.queue = Some(RoutePlan::forward(orders[..n_queued].to_vec(), now + ret, &m));
            }
            let batch = &orders[n_queued..];
            let got = check_match(&courier, batch, now, &m, &p).map(|r| r.return_time);
            let want = oracle(&courier, batch, now, &m, &p);
            match (got, want) {
                (None, None) => {}
                (Some(a), Some(b)) => prop_assert!((a - b).abs() <= 1e-9),
                other => prop_assert!(false, "mismatch {:?}", other),
            }
        }

        #[test]
        fn more_slack_never_breaks_feasibility((seed, spec, _q, now, _ret, shift_start) in arb_case(), extra in 0.0f64..10.0) {
            let city = generate_city(8, 4.0, 2, seed).unwrap();
            let m = build_travel_times(&city, 20.0, 0.1, seed).unwrap();
            let p = params();
            let tight: Vec<Order> = spec.iter().enumerate()
                .map(|(i, &(dest, slack))| Order { id: i as u64, dest, dead: now + m.direct(dest) + slack, epoch: 0 })
                .collect();
            let loose: Vec<Order> = tight.iter().map(|o| Order { dead: o.dead + extra, ..*o }).collect();
            let courier = Courier::new(shift_start);
            if check_match(&courier, &tight, now, &m, &p).is_some() {
                prop_assert!(check_match(&courier, &loose, now, &m, &p).is_some());
            }
        }

        #[test]
        fn infeasible_batch_has_no_feasible_superset_on_metric_matrix(seed in any::<u64>(), slack in prop::collection::vec(0.0f64..12.0, 4), now in 0.0f64..300.0) {
            let city = generate_city(8, 4.0, 2, seed).unwrap();
            let m = build_travel_times(&city, 20.0, 0.0, seed).unwrap();
            prop_assume!(m.is_metric());
            let p = params();
            let orders: Vec<Order> = slack.iter().enumerate()
                .map(|(i, &s)| { let dest = 1 + (seed as usize + i * 5) % 7; Order { id: i as u64, dest, dead: now + m.direct(dest) + s, epoch: 0 } })
                .collect();
            let courier = Courier::new(0.0);
            for b in enumerate_batches(4, 3) {
                let sub: Vec<Order> = b.iter().map(|&i| orders[i]).collect();
                if check_match(&courier, &sub, now, &m, &p).is_none() {
                    for sup in enumerate_batches(4, 3) {
                        if sup.len() > b.len() && b.iter().all(|x| sup.contains(x)) {
                            let s: Vec<Order> = sup.iter().map(|&i| orders[i]).collect();
                            prop_assert!(check_match(&courier, &s, now, &m, &p).is_none());
                        }
                    }
                }
            }
        }
    }
}
