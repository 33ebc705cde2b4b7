//! Order arrival profiles, per-epoch sampling and cached day streams.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::{weighted::WeightedIndex, Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{order_deadline, Order, SimParams};
use crate::error::{OdpError, Result};
use crate::geo::TravelTimeMatrix;
use crate::rng::stream_rng;

/// Relative hourly order intensity of a delivery day: quiet between 3 and
/// 6 AM, a lunch bump and the main peak between 7 and 9 PM.
const HOURLY_SHAPE: [f64; 24] = [
    0.60, 0.40, 0.30, 0.20, 0.20, 0.25, 0.40, 0.60, 0.80, 0.90, 1.00, 1.30, 1.60, 1.40, 1.10,
    1.00, 1.10, 1.40, 1.80, 2.10, 2.00, 1.60, 1.20, 0.90,
];

/// Expected number of orders per decision epoch plus the standard deviation
/// of the per-epoch count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrivalProfile {
    pub means: Vec<f64>,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
}

fn default_sigma() -> f64 {
    1.0
}

impl ArrivalProfile {
    pub fn new(means: Vec<f64>, sigma: f64) -> Result<Self> {
        let p = Self { means, sigma };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some((t, m)) = self
            .means
            .iter()
            .enumerate()
            .find(|(_, m)| !m.is_finite() || **m < 0.0)
        {
            return Err(OdpError::Input(format!("arrival mean at epoch {t} is {m}")));
        }
        if !self.sigma.is_finite() || self.sigma < 0.0 {
            return Err(OdpError::Input(format!("arrival sigma {} must be >= 0", self.sigma)));
        }
        Ok(())
    }

    pub fn flat(epochs: usize, mean: f64, sigma: f64) -> Result<Self> {
        Self::new(vec![mean; epochs], sigma)
    }

    /// Day-shaped profile over `epochs` epochs of `epoch_minutes`, scaled so
    /// the average epoch expects `mean_per_epoch` orders.
    pub fn daily(epochs: usize, epoch_minutes: f64, mean_per_epoch: f64, sigma: f64) -> Result<Self> {
        let raw: Vec<f64> = (0..epochs)
            .map(|t| {
                let hour = (t as f64 * epoch_minutes / 60.0) % 24.0;
                let h0 = hour.floor() as usize % 24;
                let h1 = (h0 + 1) % 24;
                let frac = hour - hour.floor();
                HOURLY_SHAPE[h0] * (1.0 - frac) + HOURLY_SHAPE[h1] * frac
            })
            .collect();
        let avg = raw.iter().sum::<f64>() / epochs.max(1) as f64;
        let means = raw.iter().map(|r| r / avg * mean_per_epoch).collect();
        Self::new(means, sigma)
    }

    pub fn epochs(&self) -> usize {
        self.means.len()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| OdpError::io(path, e))?;
        let p: Self = serde_json::from_str(&text)?;
        p.validate()?;
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| OdpError::io(path, e))
    }
}

/// Draws order destinations proportionally to location popularity.
#[derive(Debug, Clone)]
pub struct DestinationSampler {
    index: WeightedIndex<f64>,
}

impl DestinationSampler {
    /// `weights[k]` is the weight of location `k + 1`.
    pub fn new(weights: &[f64]) -> Result<Self> {
        let index = WeightedIndex::new(weights.iter().copied())
            .map_err(|e| OdpError::Input(format!("destination weights: {e}")))?;
        Ok(Self { index })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.index.sample(rng) + 1
    }
}

/// Number of orders arriving in one epoch: a normal draw rounded to the
/// nearest integer and truncated at zero.
pub fn sample_count<R: Rng + ?Sized>(mean: f64, sigma: f64, rng: &mut R) -> usize {
    let x = if sigma > 0.0 {
        Normal::new(mean, sigma).expect("validated sigma").sample(rng)
    } else {
        mean
    };
    x.round().max(0.0) as usize
}

/// Samples the orders revealed at epoch `t`. Ids are taken from `next_id`.
#[allow(clippy::too_many_arguments)]
pub fn sample_arrivals<R: Rng + ?Sized>(
    t: usize,
    profile: &ArrivalProfile,
    destinations: &DestinationSampler,
    matrix: &TravelTimeMatrix,
    params: &SimParams,
    rng: &mut R,
    next_id: &mut u64,
) -> Vec<Order> {
    let mean = profile.means.get(t).copied().unwrap_or(0.0);
    let count = sample_count(mean, profile.sigma, rng);
    (0..count)
        .map(|_| {
            let dest = destinations.sample(rng);
            let id = *next_id;
            *next_id += 1;
            Order {
                id,
                dest,
                dead: order_deadline(params.epoch_time(t), dest, matrix, params.delay_max),
                epoch: t,
            }
        })
        .collect()
}

/// The full pre-sampled order stream of one day, indexed by epoch. Epoch 0
/// holds the orders accumulated overnight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayStream {
    pub epochs: Vec<Vec<Order>>,
}

impl DayStream {
    pub fn generate(
        profile: &ArrivalProfile,
        destinations: &DestinationSampler,
        matrix: &TravelTimeMatrix,
        params: &SimParams,
        seed: u64,
        stream: u64,
    ) -> Self {
        let mut rng = stream_rng(seed, stream);
        let mut next_id = 0;
        let epochs = (0..params.horizon_epochs)
            .map(|t| sample_arrivals(t, profile, destinations, matrix, params, &mut rng, &mut next_id))
            .collect();
        Self { epochs }
    }

    pub fn empty(horizon_epochs: usize) -> Self {
        Self {
            epochs: vec![Vec::new(); horizon_epochs],
        }
    }

    pub fn orders_at(&self, t: usize) -> &[Order] {
        self.epochs.get(t).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn total_orders(&self) -> usize {
        self.epochs.iter().map(Vec::len).sum()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "epoch,order_id,dest,dead")?;
        for (t, orders) in self.epochs.iter().enumerate() {
            for o in orders {
                writeln!(out, "{},{},{},{}", t, o.id, o.dest, o.dead)?;
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| OdpError::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_csv(&mut w).map_err(|e| OdpError::io(path, e))?;
        w.flush().map_err(|e| OdpError::io(path, e))
    }

    pub fn load(path: &Path, horizon_epochs: usize) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            epoch: usize,
            order_id: u64,
            dest: usize,
            dead: f64,
        }
        let mut rdr = csv::Reader::from_path(path)?;
        let mut epochs = vec![Vec::new(); horizon_epochs];
        for rec in rdr.deserialize::<Row>() {
            let row = rec.map_err(|e| OdpError::Parse {
                path: path.to_path_buf(),
                line: e.position().map(|p| p.line()).unwrap_or(0),
                message: e.to_string(),
            })?;
            if row.epoch >= horizon_epochs {
                return Err(OdpError::Input(format!(
                    "{}: epoch {} outside horizon {horizon_epochs}",
                    path.display(),
                    row.epoch
                )));
            }
            if row.dest == 0 {
                return Err(OdpError::Input(format!(
                    "{}: order {} is addressed to the depot",
                    path.display(),
                    row.order_id
                )));
            }
            epochs[row.epoch].push(Order {
                id: row.order_id,
                dest: row.dest,
                dead: row.dead,
                epoch: row.epoch,
            });
        }
        Ok(Self { epochs })
    }
}
