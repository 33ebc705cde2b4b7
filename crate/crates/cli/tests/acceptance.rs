//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Usage: `cargo test -p odp-cli --test acceptance [-- c3 c7 ...]`

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

use odp_cli::commands::{load_policy, Dataset};
use odp_cli::config::desk_train_config;
use odp_cli::report::{self, EvalReport};
use odp_cli::{cmd_ceiling, cmd_compare, cmd_evaluate, cmd_gen_data, cmd_train, load_dataset, CeilingKind, Config, Layout};
use odp_core::ceilings::{direct_ceiling, CeilingReport};
use odp_core::feasibility::{check_match, feasible_matches, CandidateSet, MatchCandidate, RoutePlan};
use odp_core::geo::{build_travel_times, generate_city, load_locations, TravelTimeMatrix, DEPOT};
use odp_core::matching::solve_matching;
use odp_core::policies::{NeurAdpPolicy, Policy, PolicyKind, Variant};
use odp_core::sim::{
    order_deadline, run_episode, ArrivalProfile, Courier, DayStream, DestinationSampler, Environment, EpisodeMetrics,
    Order, ShiftPlan, SimParams, SystemState,
};
use odp_core::vfa::{FeatureVector, QueueItem, ValueNet};

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const DESK_COURIERS: usize = 8;
const TREND_COURIERS: [usize; 3] = [8, 12, 16];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

// ---------------------------------------------------------------------------
// Shared pipeline runs

struct Run {
    cfg: Config,
    data: Dataset,
    ceiling: CeilingReport,
    evals: BTreeMap<String, EvalReport>,
}

impl Run {
    fn eval(&self, kind: PolicyKind) -> &EvalReport {
        &self.evals[&kind.to_string()]
    }

    fn mean_fulfilled(&self, kind: PolicyKind) -> f64 {
        self.eval(kind).aggregate.fulfilled.mean
    }

    fn mean_direct(&self) -> f64 {
        let d = &self.ceiling.days;
        d.iter().map(|c| c.direct as f64).sum::<f64>() / d.len() as f64
    }
}

/// Full pipelines on the desk profile, keyed by (couriers, seed). Time spent
/// building them is tracked apart from each criterion's own work.
struct Runs {
    root: TempDir,
    cache: HashMap<(usize, u64), Run>,
    spent: Duration,
}

const NEURADP: PolicyKind = PolicyKind::NeurAdp;
const MYOPIC_DC: PolicyKind = PolicyKind::Myopic(Variant::DC);
const DRL_DC: PolicyKind = PolicyKind::Drl(Variant::DC);

fn all_kinds() -> Vec<PolicyKind> {
    let mut v = vec![NEURADP];
    for var in Variant::ALL {
        v.push(PolicyKind::Myopic(var));
    }
    for var in Variant::ALL {
        v.push(PolicyKind::Drl(var));
    }
    v
}

fn desk_config(n_couriers: usize, seed: u64, dir: &Path) -> Config {
    let mut cfg = Config::default();
    cfg.seed = seed;
    cfg.fleet.n_couriers = n_couriers;
    cfg.out_dir = dir.to_path_buf();
    cfg
}

impl Runs {
    fn new() -> Self {
        Self {
            root: TempDir::new().expect("temp dir"),
            cache: HashMap::new(),
            spent: Duration::ZERO,
        }
    }

    /// Generates, trains and evaluates whatever of `kinds` is missing.
    fn get(&mut self, n_couriers: usize, seed: u64, kinds: &[PolicyKind]) -> &Run {
        let start = Instant::now();
        let key = (n_couriers, seed);
        if !self.cache.contains_key(&key) {
            let dir = self.root.path().join(format!("n{n_couriers}-s{seed}"));
            let cfg = desk_config(n_couriers, seed, &dir);
            cmd_gen_data(&cfg).expect("gen-data");
            let ceiling = cmd_ceiling(&cfg, CeilingKind::Direct).expect("ceiling");
            let data = load_dataset(&cfg).expect("dataset");
            self.cache.insert(key, Run { cfg, data, ceiling, evals: BTreeMap::new() });
        }
        let run = self.cache.get_mut(&key).unwrap();
        for &k in kinds {
            if run.evals.contains_key(&k.to_string()) {
                continue;
            }
            if !matches!(k, PolicyKind::Myopic(_)) {
                cmd_train(&run.cfg, k).expect("train");
            }
            let report = cmd_evaluate(&run.cfg, k).expect("evaluate");
            run.evals.insert(k.to_string(), report);
        }
        self.spent += start.elapsed();
        &self.cache[&key]
    }
}

// ---------------------------------------------------------------------------
// Random instances

fn random_asymmetric(rng: &mut ChaCha8Rng) -> TravelTimeMatrix {
    let n = rng.random_range(3..14);
    let rows = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 0.0 } else { rng.random_range(1.0..25.0) }).collect())
        .collect();
    TravelTimeMatrix::from_rows(rows).unwrap()
}

fn random_city(rng: &mut ChaCha8Rng) -> TravelTimeMatrix {
    let n = rng.random_range(4..40);
    let spread = rng.random_range(3.0..15.0);
    let clusters = rng.random_range(1..5);
    let noise = rng.random_range(0.0..0.3);
    let seed = rng.random();
    let locs = generate_city(n, spread, clusters, seed).unwrap();
    build_travel_times(&locs, 20.0, noise, seed ^ 0x5eed).unwrap()
}

fn random_params(rng: &mut ChaCha8Rng, max_queue: usize) -> SimParams {
    SimParams {
        queue_max: rng.random_range(1..=max_queue),
        delay_max: rng.random_range(0.0..20.0),
        ..SimParams::default()
    }
}

fn random_orders(rng: &mut ChaCha8Rng, k: usize, revealed: f64, m: &TravelTimeMatrix, p: &SimParams, id: &mut u64) -> Vec<Order> {
    (0..k)
        .map(|_| {
            let dest = rng.random_range(1..m.n_locations());
            *id += 1;
            Order {
                id: *id,
                dest,
                dead: order_deadline(revealed, dest, m, p.delay_max),
                epoch: 0,
            }
        })
        .collect()
}

/// A courier that may be off shift, away, and holding a queue of `k` orders.
fn random_courier(rng: &mut ChaCha8Rng, now: f64, k: usize, m: &TravelTimeMatrix, p: &SimParams, id: &mut u64) -> Courier {
    let latest = p.horizon_minutes() - p.shift_length;
    let mut c = Courier::new(if rng.random_bool(0.85) {
        rng.random_range(0.0..=now.min(latest))
    } else {
        rng.random_range(0.0..=latest)
    });
    c.return_at = if rng.random_bool(0.5) { now - rng.random_range(0.0..20.0) } else { now + rng.random_range(0.0..45.0) };
    if k > 0 {
        let revealed = now - rng.random_range(0.0..30.0);
        let seq = random_orders(rng, k, revealed, m, p, id);
        c.queue = Some(RoutePlan::forward(seq, now.max(c.return_at), m));
    }
    c
}

// ---------------------------------------------------------------------------
// C1: feasibility against brute force

/// Every ordering of queue plus batch from the depot; earliest feasible
/// return, or `None`.
fn brute_force_return(c: &Courier, batch: &[Order], now: f64, m: &TravelTimeMatrix, p: &SimParams) -> Option<f64> {
    let end = c.shift_start + p.shift_length;
    if now < c.shift_start || now >= end {
        return None;
    }
    let mut all: Vec<Order> = c.queue.iter().flat_map(|q| q.sequence.iter().copied()).collect();
    all.extend_from_slice(batch);
    if all.is_empty() || all.len() > p.queue_max {
        return None;
    }
    let depart = if c.return_at > now { c.return_at } else { now };
    let mut best: Option<f64> = None;
    permute(&mut all, 0, &mut |seq| {
        let mut clock = depart;
        let mut here = DEPOT;
        for o in seq {
            clock += m.get(here, o.dest);
            here = o.dest;
            if clock > o.dead {
                return;
            }
        }
        let back = clock + m.get(here, DEPOT);
        if back < end && best.is_none_or(|b| back < b) {
            best = Some(back);
        }
    });
    best
}

fn permute<T, F: FnMut(&[T])>(items: &mut [T], k: usize, visit: &mut F) {
    if k == items.len() {
        visit(items);
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permute(items, k + 1, visit);
        items.swap(k, i);
    }
}

fn c1_feasibility(_: &mut Runs) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let matrices: Vec<TravelTimeMatrix> = (0..40)
        .map(|i| if i % 2 == 0 { random_asymmetric(&mut rng) } else { random_city(&mut rng) })
        .collect();
    let (mut feasible, mut mismatches) = (0, Vec::new());
    let mut id = 0;
    for case in 0..10_000 {
        let m = &matrices[rng.random_range(0..matrices.len())];
        let p = random_params(&mut rng, 4);
        let now = p.epoch_time(rng.random_range(0..p.horizon_epochs));
        let combined = rng.random_range(1..=4);
        let queued = rng.random_range(0..combined);
        let courier = random_courier(&mut rng, now, queued, m, &p, &mut id);
        let batch = random_orders(&mut rng, combined - queued, now, m, &p, &mut id);
        let got = check_match(&courier, &batch, now, m, &p);
        let want = brute_force_return(&courier, &batch, now, m, &p);
        let same = match (&got, want) {
            (None, None) => true,
            (Some(plan), Some(ret)) => {
                let drops_ok = plan.sequence.iter().zip(&plan.drop_times).all(|(o, &t)| t <= o.dead);
                drops_ok && (plan.return_time - ret).abs() <= 1e-9
            }
            _ => false,
        };
        feasible += usize::from(want.is_some());
        if !same {
            mismatches.push(case);
        }
    }
    outcome(
        mismatches.is_empty(),
        format!("10000 cases, {feasible} feasible, {} mismatches {:?}", mismatches.len(), &mismatches[..mismatches.len().min(5)]),
    )
}

// ---------------------------------------------------------------------------
// C2: matching against exhaustive enumeration

fn exhaustive_best(cands: &CandidateSet, scores: &[Vec<f64>]) -> f64 {
    fn go(c: usize, used: u64, cands: &CandidateSet, scores: &[Vec<f64>]) -> f64 {
        if c == cands.per_courier.len() {
            return 0.0;
        }
        let mut best = f64::NEG_INFINITY;
        for (k, cand) in cands.per_courier[c].iter().enumerate() {
            let mask = cand.batch.iter().fold(0u64, |m, &o| m | 1 << o);
            if mask & used != 0 {
                continue;
            }
            best = best.max(cand.reward + scores[c][k] + go(c + 1, used | mask, cands, scores));
        }
        best
    }
    go(0, 0, cands, scores)
}

fn synthetic_candidates(rng: &mut ChaCha8Rng, n_couriers: usize, n_orders: usize) -> CandidateSet {
    let per_courier = (0..n_couriers)
        .map(|c| {
            let mut list = vec![MatchCandidate::null(c)];
            for _ in 0..rng.random_range(0..12) {
                let size = rng.random_range(1..=n_orders.min(3));
                let mut batch: Vec<usize> = Vec::new();
                while batch.len() < size {
                    let o = rng.random_range(0..n_orders);
                    if !batch.contains(&o) {
                        batch.push(o);
                    }
                }
                batch.sort_unstable();
                list.push(MatchCandidate { courier: c, batch, route: None, reward: rng.random_range(-20.0..100.0) });
            }
            list
        })
        .collect();
    CandidateSet { per_courier, n_orders }
}

fn realistic_candidates(rng: &mut ChaCha8Rng, n_couriers: usize, n_orders: usize, id: &mut u64) -> CandidateSet {
    let m = random_city(rng);
    let p = random_params(rng, 3);
    let shifts = ShiftPlan { shift_starts: vec![0.0; n_couriers], shift_length: p.shift_length };
    let env = Environment::new(m, p, shifts).unwrap();
    let t = rng.random_range(0..60);
    let now = env.params.epoch_time(t);
    let couriers = (0..n_couriers)
        .map(|_| {
            let k = rng.random_range(0..env.params.queue_max);
            let mut c = random_courier(rng, now, k, &env.matrix, &env.params, id);
            c.shift_start = 0.0;
            c
        })
        .collect();
    let orders = random_orders(rng, n_orders, now, &env.matrix, &env.params, id);
    feasible_matches(&SystemState { t, couriers, orders }, &env)
}

fn c2_matching(_: &mut Runs) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut id = 0;
    let (mut bad, mut sizes) = (Vec::new(), 0usize);
    for case in 0..1000 {
        let n_c = rng.random_range(1..=6);
        let n_o = rng.random_range(1..=6);
        let cands = if case % 2 == 0 {
            realistic_candidates(&mut rng, n_c, n_o, &mut id)
        } else {
            synthetic_candidates(&mut rng, n_c, n_o)
        };
        sizes += cands.len();
        let scores: Vec<Vec<f64>> = cands
            .per_courier
            .iter()
            .map(|l| l.iter().map(|_| rng.random_range(-60.0..60.0)).collect())
            .collect();
        let a = solve_matching(&cands, &scores).expect("solve");
        let want = exhaustive_best(&cands, &scores);
        let mut used = 0u64;
        let disjoint = a.chosen.iter().enumerate().all(|(c, &k)| {
            let mask = cands.per_courier[c][k].batch.iter().fold(0u64, |m, &o| m | 1 << o);
            let ok = mask & used == 0;
            used |= mask;
            ok
        });
        if !disjoint || (a.objective - want).abs() > 1e-9 * want.abs().max(1.0) {
            bad.push(case);
        }
    }
    outcome(
        bad.is_empty(),
        format!("1000 instances ({sizes} candidates), {} objective mismatches {:?}", bad.len(), &bad[..bad.len().min(5)]),
    )
}

// ---------------------------------------------------------------------------
// C3: conservation and hard constraints

fn c3_invariants(runs: &mut Runs) -> Outcome {
    let kinds = all_kinds();
    let run = runs.get(DESK_COURIERS, 1, &kinds);
    let layout = Layout::new(&run.cfg.out_dir);
    let env = &run.data.env;
    let profile = ArrivalProfile::load(&layout.profile()).unwrap();
    let locs = load_locations(&layout.locations(), run.cfg.city.synthesize_depot).unwrap();
    let sampler = DestinationSampler::new(&locs.delivery_weights()).unwrap();

    let mut specs: Vec<(String, Box<dyn Fn() -> Box<dyn Policy>>)> = Vec::new();
    for k in kinds {
        let spec = load_policy(&run.cfg, &run.data, k).unwrap();
        specs.push((k.to_string(), Box::new(move || spec.instantiate())));
    }
    specs.push(("neuradp-untrained".into(), Box::new(|| Box::new(NeurAdpPolicy::immediate()))));

    let mut problems = Vec::new();
    let mut episodes = 0;
    let mut check = |name: &str, d: u64, m: &EpisodeMetrics| {
        episodes += 1;
        let gap = m.conservation_gap();
        if gap != 0 || m.late_deliveries + m.capacity_violations + m.shift_violations > 0 {
            problems.push(format!(
                "{name} day {d}: gap {gap} late {} capacity {} shift {}",
                m.late_deliveries, m.capacity_violations, m.shift_violations
            ));
        }
    };
    for d in 0..50u64 {
        let day = DayStream::generate(&profile, &sampler, &env.matrix, &env.params, 303, d);
        for (name, make) in &specs {
            let m = run_episode(make().as_mut(), &day, env).unwrap();
            check(name, d, &m);
        }
        check("direct-ceiling", d, &direct_ceiling(env, &day).unwrap());
    }
    outcome(problems.is_empty(), format!("{episodes} episodes, {} with violations {:?}", problems.len(), problems.first()))
}

// ---------------------------------------------------------------------------
// C4: beta dominance

fn c4_beta(_: &mut Runs) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut id = 0;
    let (mut pairs, mut violations) = (0usize, Vec::new());
    for inst in 0..100 {
        let m = random_city(&mut rng);
        let p = random_params(&mut rng, 4);
        let n_c = rng.random_range(1..=5);
        let shifts = ShiftPlan { shift_starts: vec![0.0; n_c], shift_length: p.shift_length };
        let env = Environment::new(m, p, shifts).unwrap();
        let t = rng.random_range(0..60);
        let now = env.params.epoch_time(t);
        let couriers = (0..n_c)
            .map(|_| {
                let mut c = Courier::new(0.0);
                c.return_at = if rng.random_bool(0.5) { now } else { now + rng.random_range(0.0..40.0) };
                // A queue whose route is itself feasible, as the simulator would hold.
                let k = rng.random_range(0..env.params.queue_max);
                let mut held = random_orders(&mut rng, k, now, &env.matrix, &env.params, &mut id);
                held.iter_mut().for_each(|o| o.dead += 30.0);
                c.queue = check_match(&c, &held, now, &env.matrix, &env.params);
                c
            })
            .collect();
        let n_o = rng.random_range(1..=5);
        let orders = random_orders(&mut rng, n_o, now, &env.matrix, &env.params, &mut id);
        let cands = feasible_matches(&SystemState { t, couriers, orders }, &env);
        for list in &cands.per_courier {
            for a in list {
                for b in list {
                    if a.batch.len() > b.batch.len() {
                        pairs += 1;
                        if a.reward <= b.reward {
                            violations.push(format!("instance {inst}: q {} r {} vs q {} r {}", a.batch.len(), a.reward, b.batch.len(), b.reward));
                        }
                    }
                }
            }
        }
    }
    outcome(
        violations.is_empty() && pairs > 0,
        format!("100 matrices, {pairs} ordered pairs, {} violations {:?}", violations.len(), violations.first()),
    )
}

// ---------------------------------------------------------------------------
// C5: gradient check on the full value network

fn random_feature(rng: &mut ChaCha8Rng, n_loc: usize, qmax: usize) -> FeatureVector {
    let q = rng.random_range(0..=qmax);
    FeatureVector {
        queue: (0..q)
            .map(|_| QueueItem { dest: rng.random_range(1..n_loc), slack: rng.random_range(-5.0..40.0) })
            .collect(),
        ret: rng.random_range(0.0..60.0),
        to_shift_end: rng.random_range(0.0..360.0),
        at_depot: rng.random_bool(0.5),
        time: rng.random_range(0.0..1.0),
        others_off_shift: rng.random_range(0..8) as f64,
        others_at_depot: rng.random_range(0..8) as f64,
        others_occupancy: rng.random_range(0.0..1.0),
        arrivals: rng.random_range(0..6) as f64,
    }
}

fn c5_gradient(_: &mut Runs) -> Outcome {
    let n_loc = 40;
    let cfg = desk_train_config();
    let matrix = TravelTimeMatrix::from_rows(
        (0..n_loc).map(|i| (0..n_loc).map(|j| if i == j { 0.0 } else { 10.0 }).collect()).collect(),
    )
    .unwrap();
    let params = SimParams::default();
    let shifts = ShiftPlan { shift_starts: vec![0.0; DESK_COURIERS], shift_length: params.shift_length };
    let env = Environment::new(matrix, params, shifts).unwrap();
    let mut net = ValueNet::new(cfg.arch(&env), 505);
    let mut rng = ChaCha8Rng::seed_from_u64(506);
    // The output layer starts at zero; move away from that point.
    net.params.iter_mut().for_each(|p| *p += rng.random_range(-0.3..0.3));

    let h = 1e-4;
    let mut worst: f64 = 0.0;
    let mut per_group = [0.0f64; 3];
    let groups = net.groups();
    for _ in 0..10 {
        let f = random_feature(&mut rng, n_loc, env.params.queue_max);
        let (_, trace) = net.forward_trace(&f);
        let mut grad = vec![0.0; net.n_params()];
        net.backward(&trace, 1.0, &mut grad);
        for i in 0..net.n_params() {
            let keep = net.params[i];
            net.params[i] = keep + h;
            let fa = net.raw(&f);
            net.params[i] = keep - h;
            let fb = net.raw(&f);
            net.params[i] = keep;
            let fd = (fa - fb) / (2.0 * h);
            // Round-off of the difference quotient itself.
            let noise = 8.0 * f64::EPSILON * fa.abs().max(fb.abs()) / (2.0 * h);
            let err = ((fd - grad[i]).abs() - noise).max(0.0);
            let rel = err / fd.abs().max(grad[i].abs()).max(1e-12);
            worst = worst.max(rel);
            let g = groups.iter().position(|(_, r)| r.contains(&i)).unwrap();
            per_group[g] = per_group[g].max(rel);
        }
    }
    let names: Vec<String> = groups.iter().zip(per_group).map(|((n, _), e)| format!("{n} {e:.1e}")).collect();
    outcome(worst <= 1e-4, format!("{} params x 10 inputs, max rel error {worst:.2e} ({})", net.n_params(), names.join(", ")))
}

// ---------------------------------------------------------------------------
// C6: direct ceiling bounds every policy

fn c6_ceiling(runs: &mut Runs) -> Outcome {
    let run = runs.get(DESK_COURIERS, 1, &all_kinds());
    let mut bad = Vec::new();
    for (name, e) in &run.evals {
        for (d, c) in e.days.iter().zip(&run.ceiling.days) {
            if d.fulfilled > c.direct {
                bad.push(format!("{name} day {}: {} > {}", d.day, d.fulfilled, c.direct));
            }
        }
    }
    outcome(
        bad.is_empty(),
        format!("{} policies x {} days, {} exceedances {:?}", run.evals.len(), run.ceiling.days.len(), bad.len(), bad.first()),
    )
}

// ---------------------------------------------------------------------------
// C7-C9: trained-policy comparisons

fn c7_ordering(runs: &mut Runs) -> Outcome {
    let mut ok = 0;
    let mut notes = Vec::new();
    for s in SEEDS {
        let run = runs.get(DESK_COURIERS, s, &[NEURADP, MYOPIC_DC, DRL_DC]);
        let (n, my, drl, dir) = (run.mean_fulfilled(NEURADP), run.mean_fulfilled(MYOPIC_DC), run.mean_fulfilled(DRL_DC), run.mean_direct());
        let pass = n >= my + 0.02 * dir && my >= drl;
        ok += usize::from(pass);
        notes.push(format!("s{s} {n:.1}/{my:.1}/{drl:.1}/{dir:.1}{}", if pass { "" } else { "x" }));
    }
    outcome(ok >= 4, format!("{ok}/5 seeds; neuradp/myopic-dc/drl-dc/direct: {}", notes.join(" ")))
}

fn advantage(run: &Run) -> f64 {
    let ceiling: Vec<f64> = run.ceiling.days.iter().map(|d| d.direct as f64).collect();
    let evals = [run.eval(NEURADP).clone(), run.eval(MYOPIC_DC).clone()];
    let table = report::compare(run.cfg.seed, CeilingKind::Direct, &ceiling, &evals, "neuradp").unwrap();
    table.rows[1].pct_incr
}

fn c8_trend(runs: &mut Runs) -> Outcome {
    let mut ok = 0;
    let mut notes = Vec::new();
    for s in SEEDS {
        let adv: Vec<f64> = TREND_COURIERS.iter().map(|&n| advantage(runs.get(n, s, &[NEURADP, MYOPIC_DC]))).collect();
        let pass = adv.windows(2).all(|w| w[0] >= w[1]);
        ok += usize::from(pass);
        notes.push(format!("s{s} {:.2}/{:.2}/{:.2}{}", adv[0], adv[1], adv[2], if pass { "" } else { "x" }));
    }
    outcome(ok >= 3, format!("{ok}/5 seeds; advantage at {TREND_COURIERS:?} couriers: {}", notes.join(" ")))
}

fn c9_diagnostics(runs: &mut Runs) -> Outcome {
    let mut ok = 0;
    let mut notes = Vec::new();
    for s in SEEDS {
        let run = runs.get(DESK_COURIERS, s, &[NEURADP, MYOPIC_DC]);
        let (a, b) = (&run.eval(NEURADP).aggregate, &run.eval(MYOPIC_DC).aggregate);
        let pass = a.avg_return_time.mean < b.avg_return_time.mean && a.avg_inflight_queue.mean < b.avg_inflight_queue.mean;
        ok += usize::from(pass);
        notes.push(format!(
            "s{s} rt {:.1}/{:.1} q {:.3}/{:.3}{}",
            a.avg_return_time.mean,
            b.avg_return_time.mean,
            a.avg_inflight_queue.mean,
            b.avg_inflight_queue.mean,
            if pass { "" } else { "x" }
        ));
    }
    outcome(ok >= 3, format!("{ok}/5 seeds; neuradp/myopic-dc: {}", notes.join(" ")))
}

// ---------------------------------------------------------------------------
// C10: determinism

fn small_pipeline(dir: &Path) {
    let mut cfg = desk_config(DESK_COURIERS, 11, dir);
    cfg.data.train_days = 2;
    cfg.data.test_days = 3;
    cfg.train.episodes = 2;
    cfg.ddqn.episodes = 2;
    let kinds = [NEURADP, MYOPIC_DC, DRL_DC];
    cmd_gen_data(&cfg).unwrap();
    for k in [NEURADP, DRL_DC] {
        cmd_train(&cfg, k).unwrap();
    }
    for k in kinds {
        cmd_evaluate(&cfg, k).unwrap();
    }
    cmd_ceiling(&cfg, CeilingKind::Direct).unwrap();
    cmd_compare(&cfg, &kinds).unwrap();
}

fn files_under(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_path_buf();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn c10_determinism(_: &mut Runs) -> Outcome {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    small_pipeline(a.path());
    small_pipeline(b.path());
    let (fa, fb) = (files_under(a.path()), files_under(b.path()));
    let differing: Vec<String> = fa
        .keys()
        .chain(fb.keys())
        .filter(|k| fa.get(*k) != fb.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    outcome(differing.is_empty() && !fa.is_empty(), format!("{} files compared, differing: {differing:?}", fa.len()))
}

// ---------------------------------------------------------------------------

type Criterion = (&'static str, &'static str, Option<Duration>, fn(&mut Runs) -> Outcome);

fn main() -> ExitCode {
    let minutes = |m: u64| Some(Duration::from_secs(60 * m));
    let criteria: [Criterion; 10] = [
        ("c1", "feasibility matches brute force", minutes(1), c1_feasibility),
        ("c2", "matching is exact", minutes(2), c2_matching),
        ("c3", "conservation and hard constraints", minutes(5), c3_invariants),
        ("c4", "beta dominance", minutes(1), c4_beta),
        ("c5", "value-network gradients", minutes(1), c5_gradient),
        ("c6", "direct ceiling dominance", minutes(5), c6_ceiling),
        ("c7", "policy ordering", None, c7_ordering),
        ("c8", "advantage shrinks with fleet size", None, c8_trend),
        ("c9", "return time and queue diagnostics", None, c9_diagnostics),
        ("c10", "determinism", minutes(15), c10_determinism),
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut runs = Runs::new();
    let mut failed = 0;
    for (id, name, budget, check) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| f.eq_ignore_ascii_case(id)) {
            continue;
        }
        let shared_before = runs.spent;
        let start = Instant::now();
        let mut out = check(&mut runs);
        let shared = runs.spent - shared_before;
        let own = start.elapsed().saturating_sub(shared);
        if let Some(limit) = budget {
            if own > limit {
                out.pass = false;
                out.detail = format!("{}; over budget {limit:?}", out.detail);
            }
        }
        failed += usize::from(!out.pass);
        println!(
            "{} {id:>3} {name}: {} [{:.1}s, shared runs {:.1}s]",
            if out.pass { "PASS" } else { "FAIL" },
            out.detail,
            own.as_secs_f64(),
            shared.as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
