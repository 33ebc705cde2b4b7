use serde::{Deserialize, Serialize};

use super::{
    reward, transition_next, transition_post, Courier, DayStream, Dispatch, Environment, SystemState, TIME_EPS,
};
use crate::error::{OdpError, Result};
use crate::feasibility::{feasible_matches, CandidateSet};
use crate::matching::Assignment;
use crate::policies::Policy;

/// What one call to [`Episode::step`] produced.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub matched: usize,
    pub delivered: usize,
    pub lost: usize,
    pub dispatches: Vec<Dispatch>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub seen: Vec<usize>,
    pub matched: Vec<usize>,
    pub fulfilled: Vec<usize>,
    pub lost: Vec<usize>,
    pub couriers_at_depot: Vec<usize>,

    pub total_arrivals: usize,
    pub total_matched: usize,
    pub total_fulfilled: usize,
    pub total_lost: usize,
    pub in_flight_at_end: usize,
    pub total_reward: f64,

    pub late_deliveries: usize,
    pub capacity_violations: usize,
    pub shift_violations: usize,

    pub dispatches: usize,
    /// Mean depot-to-depot trip duration, minutes.
    pub avg_return_time: f64,
    /// Mean number of orders carried per trip.
    pub avg_trip_orders: f64,
    /// Mean queue length of couriers away on a trip, sampled after each
    /// epoch's decision.
    pub avg_inflight_queue: f64,
    /// Mean over epochs of on-shift couriers idle at the depot.
    pub avg_couriers_at_depot: f64,
    /// Mean depot-to-destination time of matched orders.
    pub avg_direct_time: f64,
}

impl EpisodeMetrics {
    /// Arrivals not accounted for by delivered, lost or in-flight orders.
    pub fn conservation_gap(&self) -> i64 {
        self.total_arrivals as i64 - (self.total_fulfilled + self.total_lost + self.in_flight_at_end) as i64
    }
}

/// Stepwise driver over one day. With `teleport` set, matched orders count
/// as delivered at once and couriers restart every epoch at the depot with
/// nothing queued.
pub struct Episode<'a> {
    env: &'a Environment,
    day: &'a DayStream,
    state: SystemState,
    teleport: bool,
    metrics: EpisodeMetrics,
    trip_minutes: f64,
    trip_orders: usize,
    direct_minutes: f64,
    away_samples: usize,
    away_queued: usize,
}

impl<'a> Episode<'a> {
    pub fn new(env: &'a Environment, day: &'a DayStream) -> Self {
        let state = SystemState {
            t: 0,
            couriers: env.initial_couriers(),
            orders: day.orders_at(0).to_vec(),
        };
        Self {
            env,
            day,
            state,
            teleport: false,
            metrics: EpisodeMetrics::default(),
            trip_minutes: 0.0,
            trip_orders: 0,
            away_samples: 0,
            away_queued: 0,
            direct_minutes: 0.0,
        }
    }

    pub fn teleporting(env: &'a Environment, day: &'a DayStream) -> Self {
        Self {
            teleport: true,
            ..Self::new(env, day)
        }
    }

    pub fn state(&self) -> &SystemState {
        &self.state
    }

    pub fn env(&self) -> &Environment {
        self.env
    }

    pub fn is_done(&self) -> bool {
        self.state.t >= self.env.params.horizon_epochs
    }

    pub fn candidates(&self) -> CandidateSet {
        feasible_matches(&self.state, self.env)
    }

    /// Applies `assignment` (chosen from `cands`, which must come from
    /// [`Episode::candidates`] at the current state) and moves to the next
    /// epoch.
    pub fn step(&mut self, cands: &CandidateSet, assignment: &Assignment) -> Result<StepOutcome> {
        if self.is_done() {
            return Err(OdpError::Contract("episode already finished".into()));
        }
        let env = self.env;
        let p = &env.params;
        let state = &self.state;
        let now = state.now(p);
        let r = reward(state, cands, assignment, env)?;
        let matched = assignment.matched_orders(cands);
        let seen = state.orders.len();
        let lost = seen - matched;
        let at_depot = state
            .couriers
            .iter()
            .filter(|c| c.on_shift(now, p.shift_length) && c.at_depot(now) && c.trip.is_none())
            .count();
        for (c, &k) in assignment.chosen.iter().enumerate() {
            for &o in &cands.per_courier[c][k].batch {
                self.direct_minutes += env.matrix.direct(state.orders[o].dest);
            }
        }

        let (post, delivered, dispatches) = if self.teleport {
            (env.initial_couriers(), matched, Vec::new())
        } else {
            let (post, events) = transition_post(state, cands, assignment, env)?;
            for d in &events.delivered {
                if d.drop > d.order.dead + TIME_EPS {
                    self.metrics.late_deliveries += 1;
                }
            }
            for d in &events.dispatches {
                if d.depart + TIME_EPS < d.shift_start || d.return_at > d.shift_end + TIME_EPS {
                    self.metrics.shift_violations += 1;
                }
                if d.orders > p.queue_max {
                    self.metrics.capacity_violations += 1;
                }
                self.trip_minutes += d.return_at - d.depart;
                self.trip_orders += d.orders;
            }
            let over = post
                .iter()
                .filter(|c| c.queue_len() > p.queue_max || c.trip.as_ref().is_some_and(|t| t.pending.len() > p.queue_max))
                .count();
            self.metrics.capacity_violations += over;
            for c in post.iter().filter(|c| c.trip.is_some()) {
                self.away_samples += 1;
                self.away_queued += c.queue_len();
            }
            (post, events.delivered.len(), events.dispatches)
        };

        let m = &mut self.metrics;
        m.seen.push(seen);
        m.matched.push(matched);
        m.fulfilled.push(delivered);
        m.lost.push(lost);
        m.couriers_at_depot.push(at_depot);
        m.total_arrivals += seen;
        m.total_matched += matched;
        m.total_fulfilled += delivered;
        m.total_lost += lost;
        m.total_reward += r;
        m.dispatches += dispatches.len();

        let t = self.state.t;
        let arrivals = self.day.orders_at(t + 1).to_vec();
        self.state = transition_next(post, t, arrivals);
        Ok(StepOutcome {
            reward: r,
            matched,
            delivered,
            lost,
            dispatches,
        })
    }

    pub fn finish(mut self) -> EpisodeMetrics {
        let in_flight: usize = self.state.couriers.iter().map(Courier::load).sum();
        let m = &mut self.metrics;
        m.in_flight_at_end = in_flight;
        let ratio = |num: f64, den: usize| if den == 0 { 0.0 } else { num / den as f64 };
        m.avg_return_time = ratio(self.trip_minutes, m.dispatches);
        m.avg_trip_orders = ratio(self.trip_orders as f64, m.dispatches);
        m.avg_inflight_queue = ratio(self.away_queued as f64, self.away_samples);
        m.avg_couriers_at_depot = ratio(m.couriers_at_depot.iter().sum::<usize>() as f64, m.couriers_at_depot.len());
        m.avg_direct_time = ratio(self.direct_minutes, m.total_matched);
        self.metrics
    }
}

/// Runs `policy` greedily through one day.
pub fn run_episode(policy: &mut dyn Policy, day: &DayStream, env: &Environment) -> Result<EpisodeMetrics> {
    let mut ep = Episode::new(env, day);
    while !ep.is_done() {
        let cands = ep.candidates();
        let decision = policy.decide(ep.state(), &cands, env)?;
        ep.step(&cands, &decision.assignment)?;
    }
    Ok(ep.finish())
}
