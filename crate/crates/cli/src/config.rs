//! Experiment configuration: one TOML file plus command-line overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use odp_core::policies::{DdqnConfig, PolicyKind};
use odp_core::sim::SimParams;
use odp_core::vfa::TrainConfig;

use crate::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Master seed; every random stream of the run is derived from it.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub city: CityConfig,
    pub sim: SimParams,
    pub fleet: FleetConfig,
    pub demand: DemandConfig,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub ddqn: DdqnConfig,
    pub evaluate: EvaluateConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CityConfig {
    /// Read locations from this CSV instead of generating a city.
    pub locations_file: Option<PathBuf>,
    /// Place a depot at the weighted centroid when the file has none.
    pub synthesize_depot: bool,
    pub n_locations: usize,
    pub spread_km: f64,
    pub clusters: usize,
    pub speed_kmh: f64,
    pub noise_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FleetConfig {
    pub n_couriers: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileShape {
    Daily,
    Flat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemandConfig {
    /// JSON arrival profile to use verbatim.
    pub profile_file: Option<PathBuf>,
    pub shape: ProfileShape,
    pub mean_per_epoch: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train_days: usize,
    pub test_days: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CeilingKind {
    Direct,
    Fixed,
}

impl std::fmt::Display for CeilingKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CeilingKind::Direct => "direct",
            CeilingKind::Fixed => "fixed",
        })
    }
}

impl std::str::FromStr for CeilingKind {
    type Err = CliError;
    fn from_str(s: &str) -> CliResult<Self> {
        match s.to_ascii_lowercase().as_str() {
            "direct" => Ok(CeilingKind::Direct),
            "fixed" => Ok(CeilingKind::Fixed),
            other => Err(CliError::Usage(format!("unknown ceiling {other:?}; expected direct or fixed"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    /// Policies evaluated, trained and compared when no `--policy` is given.
    pub policies: Vec<String>,
    /// Denominator for the comparison table.
    pub ceiling: CeilingKind,
    /// Policy the "% Incr." column is measured from.
    pub reference: String,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 1,
            out_dir: PathBuf::from("runs/default"),
            city: CityConfig::default(),
            sim: SimParams::default(),
            fleet: FleetConfig::default(),
            demand: DemandConfig::default(),
            data: DataConfig::default(),
            train: desk_train_config(),
            ddqn: DdqnConfig::default(),
            evaluate: EvaluateConfig::default(),
        }
    }
}

impl Default for CityConfig {
    fn default() -> Self {
        Self {
            locations_file: None,
            synthesize_depot: true,
            n_locations: 40,
            spread_km: 12.0,
            clusters: 3,
            speed_kmh: 20.0,
            noise_fraction: 0.1,
        }
    }
}

impl Default for FleetConfig {
    fn default() -> Self {
        Self { n_couriers: 8 }
    }
}

impl Default for DemandConfig {
    fn default() -> Self {
        Self {
            profile_file: None,
            shape: ProfileShape::Daily,
            mean_per_epoch: 1.0,
            sigma: 1.0,
        }
    }
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train_days: 20,
            test_days: 20,
        }
    }
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            policies: vec!["neuradp".into(), "myopic-dc".into(), "drl-dc".into()],
            ceiling: CeilingKind::Direct,
            reference: "neuradp".into(),
        }
    }
}

/// Training defaults for the desk-scale profile.
pub fn desk_train_config() -> TrainConfig {
    TrainConfig {
        episodes: 30,
        gamma: 0.9,
        ..TrainConfig::default()
    }
}

/// Values given on the command line; each one replaces its config key.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub ceiling: Option<CeilingKind>,
}

impl Config {
    /// Parses `text` as a set of changes to [`Config::default`]; keys left
    /// out keep their default, including inside partially given tables.
    pub fn from_toml_str(text: &str) -> CliResult<Self> {
        let user: toml::Table = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        let mut merged = toml::Table::try_from(Config::default()).map_err(|e| CliError::Config(e.to_string()))?;
        merge(&mut merged, user);
        toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Defaults when `path` is `None`.
    pub fn resolve(path: Option<&Path>, ov: &Overrides) -> CliResult<Self> {
        let mut cfg = match path {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        if let Some(s) = ov.seed {
            cfg.seed = s;
        }
        if let Some(d) = &ov.out_dir {
            cfg.out_dir = d.clone();
        }
        if let Some(c) = ov.ceiling {
            cfg.evaluate.ceiling = c;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.sim.validate()?;
        self.train.validate()?;
        if self.fleet.n_couriers == 0 {
            return Err(CliError::Config("fleet.n_couriers must be at least 1".into()));
        }
        if !(self.demand.mean_per_epoch >= 0.0) || !(self.demand.sigma >= 0.0) {
            return Err(CliError::Config("demand mean and sigma must be >= 0".into()));
        }
        self.policy_kinds()?;
        self.evaluate.reference.parse::<PolicyKind>()?;
        Ok(())
    }

    pub fn policy_kinds(&self) -> CliResult<Vec<PolicyKind>> {
        self.evaluate
            .policies
            .iter()
            .map(|p| p.parse::<PolicyKind>().map_err(CliError::from))
            .collect()
    }

    pub fn to_toml_string(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = Config::default();
        let back = Config::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_file_keeps_other_defaults() {
        let cfg = Config::from_toml_str("seed = 9\n[fleet]\nn_couriers = 4\n").unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.fleet.n_couriers, 4);
        assert_eq!(cfg.data.test_days, 20);
        let cfg = Config::from_toml_str("[train]\nepisodes = 2\n").unwrap();
        assert_eq!(cfg.train.gamma, desk_train_config().gamma);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(Config::from_toml_str("[fleet]\ncouriers = 4\n").is_err());
    }

    #[test]
    fn overrides_win() {
        let ov = Overrides {
            seed: Some(42),
            ceiling: Some(CeilingKind::Fixed),
            ..Default::default()
        };
        let cfg = Config::resolve(None, &ov).unwrap();
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.evaluate.ceiling, CeilingKind::Fixed);
    }
}
