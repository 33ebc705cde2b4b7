//! The dispatching MDP: couriers, orders, rewards and the two-stage
//! (post-decision, then exogenous) state transition.

mod arrivals;
mod episode;
mod shifts;

pub use arrivals::{sample_arrivals, sample_count, ArrivalProfile, DayStream, DestinationSampler};
pub use episode::{run_episode, Episode, EpisodeMetrics, StepOutcome};
pub use shifts::{build_shift_plan, ShiftPlan};

use serde::{Deserialize, Serialize};

use crate::error::{OdpError, Result};
use crate::feasibility::{CandidateSet, RoutePlan};
use crate::geo::{TravelTimeMatrix, DEPOT};
use crate::matching::Assignment;

/// Tolerance for comparing accumulated minute sums.
pub const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    /// Decision epoch length, minutes.
    pub epoch_minutes: f64,
    pub horizon_epochs: usize,
    pub shift_length: f64,
    pub queue_max: usize,
    /// Allowed lateness beyond the direct depot-to-destination time.
    pub delay_max: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            epoch_minutes: 5.0,
            horizon_epochs: 288,
            shift_length: 360.0,
            queue_max: 3,
            delay_max: 10.0,
        }
    }
}

impl SimParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.epoch_minutes > 0.0) {
            return Err(OdpError::Config("epoch length must be positive".into()));
        }
        if self.horizon_epochs == 0 {
            return Err(OdpError::Config("horizon must contain at least one epoch".into()));
        }
        if self.queue_max == 0 {
            return Err(OdpError::Config("queue_max must be at least 1".into()));
        }
        if !(self.shift_length > 0.0) || self.shift_length > self.horizon_minutes() {
            return Err(OdpError::Config("shift length must be positive and fit the horizon".into()));
        }
        if !self.delay_max.is_finite() {
            return Err(OdpError::Config("delay_max must be finite".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn epoch_time(&self, t: usize) -> f64 {
        t as f64 * self.epoch_minutes
    }

    pub fn horizon_minutes(&self) -> f64 {
        self.epoch_time(self.horizon_epochs)
    }
}

/// Everything fixed for an experiment: network, timing, staffing and the
/// reward multiplier.
#[derive(Debug, Clone)]
pub struct Environment {
    pub matrix: TravelTimeMatrix,
    pub params: SimParams,
    pub shifts: ShiftPlan,
    pub beta: f64,
}

impl Environment {
    pub fn new(matrix: TravelTimeMatrix, params: SimParams, shifts: ShiftPlan) -> Result<Self> {
        params.validate()?;
        let beta = compute_beta(&matrix, params.queue_max)?;
        Ok(Self {
            matrix,
            params,
            shifts,
            beta,
        })
    }

    pub fn n_couriers(&self) -> usize {
        self.shifts.n_couriers()
    }

    pub fn initial_couriers(&self) -> Vec<Courier> {
        self.shifts
            .shift_starts
            .iter()
            .map(|&s| Courier::new(s))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Order {
    pub id: u64,
    pub dest: usize,
    /// Absolute deadline, minutes from the start of the day.
    pub dead: f64,
    /// Epoch at which the order was revealed.
    pub epoch: usize,
}

/// An order handed over to its customer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Delivery {
    pub order: Order,
    pub drop: f64,
}

/// Orders on the road: dispatched from the depot with known drop times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trip {
    pub depart: f64,
    pub return_at: f64,
    pub pending: Vec<Delivery>,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Courier {
    pub shift_start: f64,
    /// Absolute minute the courier is next back at the depot; any value not
    /// after "now" means the courier is at the depot.
    pub return_at: f64,
    /// Orders waiting for the next dispatch, kept with their planned route
    /// (departure at `max(now, return_at)`).
    pub queue: Option<RoutePlan>,
    /// Current trip, if away.
    pub trip: Option<Trip>,
}

impl Courier {
    pub fn new(shift_start: f64) -> Self {
        Self {
            shift_start,
            return_at: 0.0,
            queue: None,
            trip: None,
        }
    }

    pub fn shift_end(&self, shift_length: f64) -> f64 {
        self.shift_start + shift_length
    }

    pub fn on_shift(&self, now: f64, shift_length: f64) -> bool {
        self.shift_start <= now && now < self.shift_end(shift_length)
    }

    /// Minutes until the courier is back at the depot (0 if already there).
    pub fn ret(&self, now: f64) -> f64 {
        (self.return_at - now).max(0.0)
    }

    pub fn at_depot(&self, now: f64) -> bool {
        self.return_at <= now
    }

    pub fn queued_orders(&self) -> &[Order] {
        self.queue.as_ref().map(|p| p.sequence.as_slice()).unwrap_or(&[])
    }

    pub fn queue_len(&self) -> usize {
        self.queued_orders().len()
    }

    /// Orders held: undelivered trip orders plus queued ones.
    pub fn load(&self) -> usize {
        self.trip.as_ref().map(|t| t.pending.len()).unwrap_or(0) + self.queue_len()
    }

    /// Duration of the already-committed queue route, minutes.
    pub fn committed_route_minutes(&self) -> f64 {
        self.queue.as_ref().map(RoutePlan::duration).unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    pub t: usize,
    pub couriers: Vec<Courier>,
    /// Orders revealed at this epoch and not yet matched.
    pub orders: Vec<Order>,
}

impl SystemState {
    pub fn now(&self, params: &SimParams) -> f64 {
        params.epoch_time(self.t)
    }
}

/// Deadline of an order for `dest` revealed at absolute minute `t`.
pub fn order_deadline(t: f64, dest: usize, matrix: &TravelTimeMatrix, delay_max: f64) -> f64 {
    t + matrix.direct(dest) + delay_max
}

/// Reward multiplier making served-order count dominate route time: the
/// `queue_max` largest customer-to-customer times plus the largest
/// customer-to-depot time.
pub fn compute_beta(matrix: &TravelTimeMatrix, queue_max: usize) -> Result<f64> {
    if queue_max == 0 {
        return Err(OdpError::Config("queue_max must be at least 1".into()));
    }
    let n = matrix.n_locations();
    let mut inter: Vec<f64> = (1..n)
        .flat_map(|i| (1..n).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| matrix.get(i, j))
        .collect();
    inter.sort_by(|a, b| b.total_cmp(a));
    let longest: f64 = inter.iter().take(queue_max).sum();
    let back = (1..n).map(|i| matrix.get(i, DEPOT)).fold(0.0, f64::max);
    Ok(longest + back)
}

/// Immediate contribution of one courier: `beta * new_orders` minus the
/// route minutes the action adds on top of the courier's committed queue.
pub fn courier_reward(courier: &Courier, route: &RoutePlan, new_orders: usize, beta: f64) -> f64 {
    beta * new_orders as f64 - (route.duration() - courier.committed_route_minutes())
}

/// Total immediate reward of an assignment, re-derived from the chosen
/// routes after checking they are feasible for the state.
pub fn reward(
    state: &SystemState,
    candidates: &CandidateSet,
    assignment: &Assignment,
    env: &Environment,
) -> Result<f64> {
    audit_assignment(state, candidates, assignment, env)?;
    let mut total = 0.0;
    for (c, &k) in assignment.chosen.iter().enumerate() {
        let cand = &candidates.per_courier[c][k];
        if let Some(route) = &cand.route {
            total += courier_reward(&state.couriers[c], route, cand.batch.len(), env.beta);
        }
    }
    Ok(total)
}

/// Structural checks on an assignment: one candidate per courier, orders
/// used at most once, and every chosen route respects capacity, deadlines
/// and the courier's shift.
pub fn audit_assignment(
    state: &SystemState,
    candidates: &CandidateSet,
    assignment: &Assignment,
    env: &Environment,
) -> Result<()> {
    let n = state.couriers.len();
    if assignment.chosen.len() != n || candidates.per_courier.len() != n {
        return Err(OdpError::Contract(format!(
            "assignment covers {} couriers, state has {n}",
            assignment.chosen.len()
        )));
    }
    let now = state.now(&env.params);
    let mut used = vec![false; state.orders.len()];
    for (c, &k) in assignment.chosen.iter().enumerate() {
        let cand = candidates.per_courier[c]
            .get(k)
            .ok_or_else(|| OdpError::Contract(format!("courier {c}: candidate {k} out of range")))?;
        if cand.courier != c {
            return Err(OdpError::Contract(format!("candidate for courier {} chosen for {c}", cand.courier)));
        }
        for &o in &cand.batch {
            if o >= used.len() || std::mem::replace(&mut used[o], true) {
                return Err(OdpError::Contract(format!("order index {o} assigned twice or unknown")));
            }
        }
        let courier = &state.couriers[c];
        match &cand.route {
            None if cand.batch.is_empty() => {}
            None => return Err(OdpError::Contract(format!("courier {c}: batch without route"))),
            Some(route) => check_route(courier, &cand.batch, route, state, now, env)
                .map_err(|msg| OdpError::Contract(format!("courier {c}: {msg}")))?,
        }
    }
    Ok(())
}

fn check_route(
    courier: &Courier,
    batch: &[usize],
    route: &RoutePlan,
    state: &SystemState,
    now: f64,
    env: &Environment,
) -> std::result::Result<(), String> {
    let p = &env.params;
    if !courier.on_shift(now, p.shift_length) {
        return Err("courier is off shift".into());
    }
    let mut expected: Vec<u64> = courier.queued_orders().iter().map(|o| o.id).collect();
    expected.extend(batch.iter().map(|&i| state.orders[i].id));
    expected.sort_unstable();
    let mut got: Vec<u64> = route.sequence.iter().map(|o| o.id).collect();
    got.sort_unstable();
    if expected != got {
        return Err("route does not cover exactly queue + batch".into());
    }
    if got.len() > p.queue_max {
        return Err(format!("{} orders exceed capacity {}", got.len(), p.queue_max));
    }
    let depart = now.max(courier.return_at);
    if (route.depart - depart).abs() > TIME_EPS {
        return Err(format!("route departs at {}, expected {depart}", route.depart));
    }
    let replay = RoutePlan::forward(route.sequence.clone(), route.depart, &env.matrix);
    for (o, drop) in replay.sequence.iter().zip(&replay.drop_times) {
        if *drop > o.dead + TIME_EPS {
            return Err(format!("order {} dropped at {drop} after deadline {}", o.id, o.dead));
        }
    }
    if replay.return_time >= courier.shift_end(p.shift_length) {
        return Err("route returns after shift end".into());
    }
    Ok(())
}

/// Bookkeeping of one post-decision transition.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TransitionEvents {
    pub delivered: Vec<Delivery>,
    pub dispatches: Vec<Dispatch>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dispatch {
    pub courier: usize,
    pub depart: f64,
    pub return_at: f64,
    pub orders: usize,
    pub shift_start: f64,
    pub shift_end: f64,
}

/// Applies the chosen candidates and simulates couriers forward one epoch.
///
/// Couriers at the depot with a non-empty queue leave immediately; couriers
/// returning during the epoch drop their finished trip and leave again
/// with whatever queued up while they were away.
pub fn transition_post(
    state: &SystemState,
    candidates: &CandidateSet,
    assignment: &Assignment,
    env: &Environment,
) -> Result<(Vec<Courier>, TransitionEvents)> {
    audit_assignment(state, candidates, assignment, env)?;
    let now = state.now(&env.params);
    let mut couriers = state.couriers.clone();
    for (c, &k) in assignment.chosen.iter().enumerate() {
        if let Some(route) = &candidates.per_courier[c][k].route {
            couriers[c].queue = Some(route.clone());
        }
    }
    let mut events = TransitionEvents::default();
    for (idx, courier) in couriers.iter_mut().enumerate() {
        advance_courier(idx, courier, now, env.params.epoch_minutes, env.params.shift_length, &mut events);
    }
    Ok((couriers, events))
}

/// Moves one courier from `now` to `now + delta`.
pub fn advance_courier(
    idx: usize,
    courier: &mut Courier,
    now: f64,
    delta: f64,
    shift_length: f64,
    events: &mut TransitionEvents,
) {
    let until = now + delta;
    let mut clock = now;
    loop {
        if courier.trip.is_none() && courier.return_at <= clock.max(now) {
            if let Some(plan) = courier.queue.take() {
                let depart = plan.depart;
                let return_at = plan.return_time;
                let pending: Vec<Delivery> = plan
                    .sequence
                    .iter()
                    .zip(&plan.drop_times)
                    .map(|(&order, &drop)| Delivery { order, drop })
                    .collect();
                events.dispatches.push(Dispatch {
                    courier: idx,
                    depart,
                    return_at,
                    orders: pending.len(),
                    shift_start: courier.shift_start,
                    shift_end: courier.shift_end(shift_length),
                });
                courier.trip = Some(Trip {
                    depart,
                    return_at,
                    size: pending.len(),
                    pending,
                });
                courier.return_at = return_at;
            }
        }
        let Some(trip) = courier.trip.as_mut() else { break };
        let (done, rest): (Vec<Delivery>, Vec<Delivery>) =
            trip.pending.drain(..).partition(|d| d.drop <= until);
        trip.pending = rest;
        events.delivered.extend(done);
        if trip.return_at <= until {
            clock = trip.return_at;
            courier.trip = None;
            if courier.queue.is_none() {
                break;
            }
        } else {
            break;
        }
    }
}

/// Reveals the next epoch: unmatched orders leave, new arrivals come in.
pub fn transition_next(post: Vec<Courier>, t: usize, arrivals: Vec<Order>) -> SystemState {
    SystemState {
        t: t + 1,
        couriers: post,
        orders: arrivals,
    }
}
