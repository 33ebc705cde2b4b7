//! The five subcommands. Each reads its inputs from and writes its outputs
//! to the run directory, so the steps can be invoked separately.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use odp_core::ceilings::{direct_ceiling, fixed_ceiling, CeilingDay, CeilingReport};
use odp_core::geo::{build_travel_times, generate_city, load_locations, LocationSet, TravelTimeMatrix};
use odp_core::policies::{
    ddqn_train, DdqnNet, DrlPolicy, MyopicPolicy, NeurAdpPolicy, Policy, PolicyKind, Variant,
};
use odp_core::rng::derive_seed;
use odp_core::sim::{
    build_shift_plan, run_episode, ArrivalProfile, DayStream, DestinationSampler, Environment, EpisodeMetrics,
    ShiftPlan,
};
use odp_core::vfa::{load_value_net, save_value_net, train_neuradp, ValueNet};

use crate::config::{CeilingKind, CityConfig, Config, DataConfig, DemandConfig, FleetConfig, ProfileShape};
use crate::report::{self, Aggregate, CompareReport, DayReport, EvalReport};
use crate::{CliError, CliResult};

// Labels for derive_seed, one per random consumer.
const SEED_CITY: u64 = 1;
const SEED_MATRIX: u64 = 2;
const SEED_TRAIN_DAYS: u64 = 3;
const SEED_TEST_DAYS: u64 = 4;
const SEED_NEURADP: u64 = 10;
const SEED_DDQN: u64 = 20;
const SEED_FIXED: u64 = 30;

/// File locations inside a run directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Self { root: root.to_path_buf() }
    }
    pub fn data(&self) -> PathBuf {
        self.root.join("data")
    }
    pub fn locations(&self) -> PathBuf {
        self.data().join("locations.csv")
    }
    pub fn matrix(&self) -> PathBuf {
        self.data().join("travel_times.csv")
    }
    pub fn profile(&self) -> PathBuf {
        self.data().join("arrival_profile.json")
    }
    pub fn shifts(&self) -> PathBuf {
        self.data().join("shifts.json")
    }
    pub fn manifest(&self) -> PathBuf {
        self.data().join("manifest.json")
    }
    pub fn train_dir(&self) -> PathBuf {
        self.data().join("train")
    }
    pub fn test_dir(&self) -> PathBuf {
        self.data().join("test")
    }
    pub fn day_file(dir: &Path, d: usize) -> PathBuf {
        dir.join(format!("day_{d:03}.csv"))
    }
    pub fn model(&self, kind: PolicyKind) -> PathBuf {
        self.root.join("models").join(format!("{kind}.json"))
    }
    pub fn train_log(&self, kind: PolicyKind) -> PathBuf {
        self.root.join("logs").join(format!("train-{kind}.jsonl"))
    }
    pub fn failure_dump(&self, kind: PolicyKind) -> PathBuf {
        self.root.join("logs").join(format!("train-{kind}.failure.json"))
    }
    pub fn eval_report(&self, kind: PolicyKind) -> PathBuf {
        self.root.join("eval").join(format!("{kind}.json"))
    }
    pub fn eval_epochs(&self, kind: PolicyKind) -> PathBuf {
        self.root.join("eval").join(format!("{kind}-epochs.csv"))
    }
    pub fn ceiling(&self) -> PathBuf {
        self.root.join("ceiling").join("ceiling.json")
    }
    pub fn compare_json(&self) -> PathBuf {
        self.root.join("compare").join("compare.json")
    }
    pub fn compare_csv(&self) -> PathBuf {
        self.root.join("compare").join("compare.csv")
    }
}

/// The configuration sections that determine the generated data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSpec {
    pub seed: u64,
    pub city: CityConfig,
    pub sim: odp_core::sim::SimParams,
    pub fleet: FleetConfig,
    pub demand: DemandConfig,
    pub data: DataConfig,
}

impl DataSpec {
    pub fn of(cfg: &Config) -> Self {
        Self {
            seed: cfg.seed,
            city: cfg.city.clone(),
            sim: cfg.sim.clone(),
            fleet: cfg.fleet.clone(),
            demand: cfg.demand.clone(),
            data: cfg.data.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub beta: f64,
    pub n_locations: usize,
    pub n_couriers: usize,
    pub train_days: usize,
    pub test_days: usize,
    pub train_orders: usize,
    pub test_orders: usize,
    pub spec: DataSpec,
}

/// Everything an experiment step needs, loaded from the run directory.
pub struct Dataset {
    pub env: Environment,
    pub train: Vec<DayStream>,
    pub test: Vec<DayStream>,
    pub manifest: Manifest,
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write(path, text)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, missing: impl FnOnce() -> String) -> CliResult<T> {
    if !path.exists() {
        return Err(CliError::Missing(missing()));
    }
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn recreate_dir(dir: &Path) -> CliResult<()> {
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn build_locations(cfg: &Config) -> CliResult<LocationSet> {
    let c = &cfg.city;
    Ok(match &c.locations_file {
        Some(path) => load_locations(path, c.synthesize_depot)?,
        None => generate_city(c.n_locations, c.spread_km, c.clusters, derive_seed(cfg.seed, SEED_CITY))?,
    })
}

fn build_profile(cfg: &Config) -> CliResult<ArrivalProfile> {
    let d = &cfg.demand;
    let p = &cfg.sim;
    let profile = match (&d.profile_file, d.shape) {
        (Some(path), _) => ArrivalProfile::load(path)?,
        (None, ProfileShape::Daily) => ArrivalProfile::daily(p.horizon_epochs, p.epoch_minutes, d.mean_per_epoch, d.sigma)?,
        (None, ProfileShape::Flat) => ArrivalProfile::flat(p.horizon_epochs, d.mean_per_epoch, d.sigma)?,
    };
    if profile.epochs() != p.horizon_epochs {
        return Err(CliError::Config(format!(
            "arrival profile has {} epochs but the horizon has {}",
            profile.epochs(),
            p.horizon_epochs
        )));
    }
    Ok(profile)
}

/// Generates the city, travel times, arrival profile, shift plan and the
/// training and test day streams.
pub fn cmd_gen_data(cfg: &Config) -> CliResult<Manifest> {
    cfg.validate()?;
    let layout = Layout::new(&cfg.out_dir);
    let locations = build_locations(cfg)?;
    // Rounded to the CSV precision so the reloaded matrix is the one the
    // deadlines were computed from.
    let matrix = build_travel_times(
        &locations,
        cfg.city.speed_kmh,
        cfg.city.noise_fraction,
        derive_seed(cfg.seed, SEED_MATRIX),
    )?
    .rounded(6);
    let profile = build_profile(cfg)?;
    let shifts = build_shift_plan(cfg.fleet.n_couriers, &profile, &cfg.sim)?;
    let env = Environment::new(matrix, cfg.sim.clone(), shifts)?;
    let sampler = DestinationSampler::new(&locations.delivery_weights())?;

    fs::create_dir_all(layout.data()).map_err(|e| CliError::io(&layout.data(), e))?;
    locations.save(&layout.locations())?;
    env.matrix.save_csv(&layout.matrix())?;
    profile.save(&layout.profile())?;
    write_json(&layout.shifts(), &env.shifts)?;

    let mut counts = [0usize; 2];
    for (k, (dir, n, label)) in [
        (layout.train_dir(), cfg.data.train_days, SEED_TRAIN_DAYS),
        (layout.test_dir(), cfg.data.test_days, SEED_TEST_DAYS),
    ]
    .into_iter()
    .enumerate()
    {
        recreate_dir(&dir)?;
        for d in 0..n {
            let day = DayStream::generate(&profile, &sampler, &env.matrix, &env.params, derive_seed(cfg.seed, label), d as u64);
            counts[k] += day.total_orders();
            day.save(&Layout::day_file(&dir, d))?;
        }
    }
    let manifest = Manifest {
        seed: cfg.seed,
        beta: env.beta,
        n_locations: env.matrix.n_locations(),
        n_couriers: env.n_couriers(),
        train_days: cfg.data.train_days,
        test_days: cfg.data.test_days,
        train_orders: counts[0],
        test_orders: counts[1],
        spec: DataSpec::of(cfg),
    };
    write_json(&layout.manifest(), &manifest)?;
    Ok(manifest)
}

/// Loads the dataset written by [`cmd_gen_data`], refusing data generated
/// under a different configuration.
pub fn load_dataset(cfg: &Config) -> CliResult<Dataset> {
    let layout = Layout::new(&cfg.out_dir);
    let manifest: Manifest = read_json(&layout.manifest(), || {
        format!("no dataset in {}; run `odp gen-data` first", cfg.out_dir.display())
    })?;
    if manifest.spec != DataSpec::of(cfg) {
        return Err(CliError::Usage(format!(
            "the dataset in {} was generated with a different configuration; rerun `odp gen-data`",
            cfg.out_dir.display()
        )));
    }
    let matrix = TravelTimeMatrix::load_csv(&layout.matrix())?;
    let shifts: ShiftPlan = read_json(&layout.shifts(), || "shift plan missing; rerun `odp gen-data`".into())?;
    let shifts = ShiftPlan::new(shifts.shift_starts, shifts.shift_length, cfg.sim.horizon_minutes())?;
    let env = Environment::new(matrix, cfg.sim.clone(), shifts)?;
    let load_days = |dir: PathBuf, n: usize| -> CliResult<Vec<DayStream>> {
        (0..n)
            .map(|d| Ok(DayStream::load(&Layout::day_file(&dir, d), cfg.sim.horizon_epochs)?))
            .collect()
    };
    Ok(Dataset {
        train: load_days(layout.train_dir(), manifest.train_days)?,
        test: load_days(layout.test_dir(), manifest.test_days)?,
        env,
        manifest,
    })
}

fn variant_index(v: Variant) -> u64 {
    match v {
        Variant::DC => 0,
        Variant::DF => 1,
        Variant::CE => 2,
        Variant::CF => 3,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub policy: String,
    pub updates: usize,
    pub checkpoint: PathBuf,
    pub param_hash: String,
}

/// Trains one learning policy and writes its checkpoint plus a JSON-lines
/// log with one line per gradient update.
pub fn cmd_train(cfg: &Config, kind: PolicyKind) -> CliResult<TrainSummary> {
    let data = load_dataset(cfg)?;
    train_on(cfg, &data, kind)
}

fn train_on(cfg: &Config, data: &Dataset, kind: PolicyKind) -> CliResult<TrainSummary> {
    let layout = Layout::new(&cfg.out_dir);
    let mut log = String::new();
    let mut updates = 0usize;
    let outcome = match kind {
        PolicyKind::Myopic(_) => {
            return Err(CliError::Usage(format!("{kind} has nothing to train")));
        }
        PolicyKind::NeurAdp => {
            let seed = derive_seed(cfg.seed, SEED_NEURADP);
            train_neuradp(&data.env, &data.train, &cfg.train, seed, &mut |line| {
                updates += 1;
                log.push_str(&serde_json::to_string(line).expect("log line serialises"));
                log.push('\n');
            })
            .and_then(|net| {
                let meta = serde_json::json!({ "seed": cfg.seed, "train": cfg.train, "train_days": data.train.len() });
                save_value_net(&layout.model(kind), &ensure_parent(&layout.model(kind), net)?, meta.clone())?;
                Ok(load_value_net(&layout.model(kind), None)?.param_hash())
            })
        }
        PolicyKind::Drl(v) => {
            let seed = derive_seed(cfg.seed, SEED_DDQN + variant_index(v));
            ddqn_train(&data.env, &data.train, v, &cfg.ddqn, seed, &mut |line| {
                updates += 1;
                log.push_str(&serde_json::to_string(line).expect("log line serialises"));
                log.push('\n');
            })
            .and_then(|net| {
                let meta = serde_json::json!({ "seed": cfg.seed, "ddqn": cfg.ddqn, "train_days": data.train.len() });
                ensure_parent(&layout.model(kind), ())?;
                net.save(&layout.model(kind), meta)?;
                Ok(odp_core::vfa::params_hash(&net.params))
            })
        }
    };
    write(&layout.train_log(kind), &log)?;
    match outcome {
        Ok(param_hash) => {
            let _ = fs::remove_file(layout.failure_dump(kind));
            Ok(TrainSummary {
                policy: kind.to_string(),
                updates,
                checkpoint: layout.model(kind),
                param_hash,
            })
        }
        Err(e) => {
            let dump = serde_json::json!({
                "seed": cfg.seed,
                "policy": kind.to_string(),
                "updates_completed": updates,
                "error": e.to_string(),
            });
            write_json(&layout.failure_dump(kind), &dump)?;
            Err(e.into())
        }
    }
}

fn ensure_parent<T>(path: &Path, value: T) -> odp_core::Result<T> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| odp_core::OdpError::io(parent, e))?;
    }
    Ok(value)
}

/// A policy ready to be instantiated once per test day.
pub enum PolicySpec {
    NeurAdp(ValueNet, f64),
    Myopic(Variant),
    Drl(DdqnNet, Variant),
}

impl PolicySpec {
    pub fn instantiate(&self) -> Box<dyn Policy> {
        match self {
            PolicySpec::NeurAdp(net, gamma) => Box::new(NeurAdpPolicy::new(net.clone(), *gamma)),
            PolicySpec::Myopic(v) => Box::new(MyopicPolicy { variant: *v }),
            PolicySpec::Drl(net, v) => Box::new(DrlPolicy { net: net.clone(), variant: *v }),
        }
    }

    pub fn checkpoint(&self) -> Option<String> {
        match self {
            PolicySpec::NeurAdp(net, _) => Some(net.param_hash()),
            PolicySpec::Myopic(_) => None,
            PolicySpec::Drl(net, _) => Some(odp_core::vfa::params_hash(&net.params)),
        }
    }
}

pub fn load_policy(cfg: &Config, data: &Dataset, kind: PolicyKind) -> CliResult<PolicySpec> {
    let layout = Layout::new(&cfg.out_dir);
    let path = layout.model(kind);
    let need = || CliError::Missing(format!("no checkpoint for {kind} at {}; run `odp train --policy {kind}` first", path.display()));
    Ok(match kind {
        PolicyKind::Myopic(v) => PolicySpec::Myopic(v),
        PolicyKind::NeurAdp => {
            if !path.exists() {
                return Err(need());
            }
            let expected = cfg.train.arch(&data.env);
            PolicySpec::NeurAdp(load_value_net(&path, Some(&expected))?, cfg.train.gamma)
        }
        PolicyKind::Drl(v) => {
            if !path.exists() {
                return Err(need());
            }
            let net = DdqnNet::load(&path)?;
            if net.arch != odp_core::policies::DdqnArch::new(data.env.n_couriers(), data.env.matrix.n_locations()) {
                return Err(CliError::Core(odp_core::OdpError::ArchitectureMismatch(format!(
                    "{}: network does not fit this dataset",
                    path.display()
                ))));
            }
            PolicySpec::Drl(net, v)
        }
    })
}

/// Runs every test day greedily, in parallel, in day order.
fn run_days(spec: &PolicySpec, env: &Environment, days: &[DayStream]) -> CliResult<Vec<EpisodeMetrics>> {
    Ok(days
        .par_iter()
        .map(|day| run_episode(spec.instantiate().as_mut(), day, env))
        .collect::<odp_core::Result<Vec<_>>>()?)
}

/// Evaluates one policy on the cached test days and writes its JSON report
/// and per-epoch CSV.
pub fn cmd_evaluate(cfg: &Config, kind: PolicyKind) -> CliResult<EvalReport> {
    let data = load_dataset(cfg)?;
    evaluate_on(cfg, &data, kind)
}

fn evaluate_on(cfg: &Config, data: &Dataset, kind: PolicyKind) -> CliResult<EvalReport> {
    let layout = Layout::new(&cfg.out_dir);
    let spec = load_policy(cfg, data, kind)?;
    let metrics = run_days(&spec, &data.env, &data.test)?;
    let days: Vec<DayReport> = metrics.iter().enumerate().map(|(d, m)| DayReport::from_metrics(d, m)).collect();
    let report = EvalReport {
        seed: cfg.seed,
        policy: kind.to_string(),
        checkpoint: spec.checkpoint(),
        aggregate: Aggregate::of(&days),
        days,
    };
    write_json(&layout.eval_report(kind), &report)?;
    write(&layout.eval_epochs(kind), report::epochs_csv(cfg.seed, &report.policy, &metrics))?;
    Ok(report)
}

/// Computes the Direct ceiling for every test day, and the Fixed ceiling
/// as well when `kind` is [`CeilingKind::Fixed`].
pub fn cmd_ceiling(cfg: &Config, kind: CeilingKind) -> CliResult<CeilingReport> {
    let data = load_dataset(cfg)?;
    let layout = Layout::new(&cfg.out_dir);
    let env = &data.env;
    let days = data
        .test
        .par_iter()
        .enumerate()
        .map(|(d, day)| {
            let direct = direct_ceiling(env, day)?.total_fulfilled;
            let fixed = match kind {
                CeilingKind::Direct => None,
                CeilingKind::Fixed => {
                    let seed = derive_seed(derive_seed(cfg.seed, SEED_FIXED), d as u64);
                    Some(fixed_ceiling(env, day, &cfg.train, seed)?.total_fulfilled)
                }
            };
            Ok(CeilingDay {
                day: d,
                arrivals: day.total_orders(),
                direct,
                fixed,
            })
        })
        .collect::<odp_core::Result<Vec<_>>>()?;
    let report = CeilingReport { seed: cfg.seed, days };
    write_json(&layout.ceiling(), &report)?;
    Ok(report)
}

/// Builds the comparison table from the stored evaluations and ceiling.
pub fn cmd_compare(cfg: &Config, kinds: &[PolicyKind]) -> CliResult<CompareReport> {
    let layout = Layout::new(&cfg.out_dir);
    let kind = cfg.evaluate.ceiling;
    let ceiling: CeilingReport = read_json(&layout.ceiling(), || {
        format!("no ceiling report in {}; run `odp ceiling --ceiling {kind}` first", cfg.out_dir.display())
    })?;
    let values = report::ceiling_values(&ceiling, kind)?;
    let reference: PolicyKind = cfg.evaluate.reference.parse()?;
    let mut all: Vec<PolicyKind> = kinds.to_vec();
    if !all.contains(&reference) {
        all.insert(0, reference);
    }
    let evals = all
        .iter()
        .map(|&k| {
            read_json::<EvalReport>(&layout.eval_report(k), || {
                format!("no evaluation for {k} in {}; run `odp evaluate --policy {k}` first", cfg.out_dir.display())
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    let table = report::compare(cfg.seed, kind, &values, &evals, &reference.to_string())?;
    write_json(&layout.compare_json(), &table)?;
    write(&layout.compare_csv(), report::compare_csv(&table))?;
    Ok(table)
}
