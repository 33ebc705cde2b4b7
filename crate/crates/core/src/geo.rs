//! Spatial network: delivery locations, great-circle distances and the
//! travel-time matrix couriers move on.
//!
//! Location 0 is always the depot. Travel times are minutes, asymmetric
//! (direction-dependent noise) and fixed for the lifetime of an experiment.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Pareto};
use serde::{Deserialize, Serialize};

use crate::error::{OdpError, Result};

pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Reference coordinate used to anchor synthetic cities (central Brooklyn).
pub const DEFAULT_ORIGIN: LatLon = LatLon {
    lat: 40.6782,
    lon: -73.9442,
};

pub const DEPOT: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

impl LatLon {
    pub fn new(lat: f64, lon: f64) -> Self {
        Self { lat, lon }
    }

    fn validate(&self) -> Result<()> {
        if !(-90.0..=90.0).contains(&self.lat) || !(-180.0..=180.0).contains(&self.lon) {
            return Err(OdpError::Input(format!(
                "coordinate out of range: lat {} lon {}",
                self.lat, self.lon
            )));
        }
        Ok(())
    }
}

/// Great-circle distance in kilometres.
pub fn haversine_km(a: LatLon, b: LatLon) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    let (phi1, phi2) = (a.lat.to_radians(), b.lat.to_radians());
    let dphi = (b.lat - a.lat).to_radians();
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    let h = h.clamp(0.0, 1.0);
    Ok(2.0 * EARTH_RADIUS_KM * h.sqrt().atan2((1.0 - h).sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub id: usize,
    pub lat: f64,
    pub lon: f64,
    /// Relative order frequency; ignored for the depot.
    pub weight: f64,
}

impl Location {
    pub fn coord(&self) -> LatLon {
        LatLon::new(self.lat, self.lon)
    }
}

/// Validated set of locations with ids `0..len`, the depot at id 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationSet {
    locations: Vec<Location>,
}

impl LocationSet {
    pub fn new(mut locations: Vec<Location>) -> Result<Self> {
        locations.sort_by_key(|l| l.id);
        if locations.len() < 2 {
            return Err(OdpError::Input(
                "need a depot and at least one delivery location".into(),
            ));
        }
        for (expected, loc) in locations.iter().enumerate() {
            if loc.id != expected {
                return Err(OdpError::Input(format!(
                    "location ids must be contiguous from 0; expected {expected}, found {}",
                    loc.id
                )));
            }
            loc.coord().validate()?;
            if !loc.weight.is_finite() || loc.weight < 0.0 {
                return Err(OdpError::Input(format!(
                    "location {} has invalid weight {}",
                    loc.id, loc.weight
                )));
            }
        }
        let total: f64 = locations[1..].iter().map(|l| l.weight).sum();
        if total <= 0.0 {
            return Err(OdpError::Input(
                "delivery location weights must sum to a positive value".into(),
            ));
        }
        Ok(Self { locations })
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    pub fn as_slice(&self) -> &[Location] {
        &self.locations
    }

    pub fn depot(&self) -> &Location {
        &self.locations[DEPOT]
    }

    /// Sampling weights of the delivery points, indexed by `id - 1`.
    pub fn delivery_weights(&self) -> Vec<f64> {
        self.locations[1..].iter().map(|l| l.weight).collect()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "id,lat,lon,weight")?;
        for l in &self.locations {
            writeln!(out, "{},{},{},{}", l.id, l.lat, l.lon, l.weight)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| OdpError::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
            .map_err(|e| OdpError::io(path, e))
    }
}

#[derive(Debug, Deserialize)]
struct LocationRow {
    id: i64,
    lat: f64,
    lon: f64,
    weight: f64,
}

/// Parses a location CSV (`id,lat,lon,weight`).
///
/// With `synthesize_depot`, a file lacking an id-0 row gets a depot at the
/// weighted centroid of its delivery points.
pub fn parse_locations<R: Read>(
    reader: R,
    source: &Path,
    synthesize_depot: bool,
) -> Result<LocationSet> {
    let parse_err = |line: u64, message: String| OdpError::Parse {
        path: source.to_path_buf(),
        line,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let names: Vec<&str> = headers.iter().collect();
    if names != ["id", "lat", "lon", "weight"] {
        return Err(parse_err(1, format!("expected header id,lat,lon,weight, got {names:?}")));
    }
    let mut seen = std::collections::BTreeMap::new();
    let mut locations = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let row: LocationRow = record
            .deserialize(Some(&headers))
            .map_err(|e| parse_err(line, format!("malformed row: {e}")))?;
        if row.id < 0 {
            return Err(parse_err(line, format!("negative id {}", row.id)));
        }
        let id = row.id as usize;
        if let Some(first) = seen.insert(id, line) {
            return Err(parse_err(line, format!("duplicate id {id} (first seen on line {first})")));
        }
        let loc = Location {
            id,
            lat: row.lat,
            lon: row.lon,
            weight: row.weight,
        };
        loc.coord()
            .validate()
            .map_err(|e| parse_err(line, e.to_string()))?;
        locations.push(loc);
    }
    if !seen.contains_key(&DEPOT) {
        if !synthesize_depot {
            return Err(parse_err(0, "no depot row (id 0) and depot synthesis disabled".into()));
        }
        let total: f64 = locations.iter().map(|l| l.weight).sum();
        if total <= 0.0 {
            return Err(parse_err(0, "cannot place depot: delivery weights sum to zero".into()));
        }
        let lat = locations.iter().map(|l| l.lat * l.weight).sum::<f64>() / total;
        let lon = locations.iter().map(|l| l.lon * l.weight).sum::<f64>() / total;
        locations.push(Location {
            id: DEPOT,
            lat,
            lon,
            weight: 0.0,
        });
    }
    LocationSet::new(locations)
}

pub fn load_locations(path: &Path, synthesize_depot: bool) -> Result<LocationSet> {
    let file = std::fs::File::open(path).map_err(|e| OdpError::io(path, e))?;
    parse_locations(std::io::BufReader::new(file), path, synthesize_depot)
}

/// Row-major matrix of travel minutes; `get(i, j)` is the time leaving `i`
/// toward `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TravelTimeMatrix {
    n: usize,
    minutes: Vec<f64>,
    #[serde(skip)]
    metric: Option<bool>,
}

impl TravelTimeMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let mut minutes = Vec::with_capacity(n * n);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != n {
                return Err(OdpError::Input(format!(
                    "matrix row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
            minutes.extend(row);
        }
        Self::from_flat(n, minutes)
    }

    pub fn from_flat(n: usize, minutes: Vec<f64>) -> Result<Self> {
        if minutes.len() != n * n {
            return Err(OdpError::Input("matrix data length is not n*n".into()));
        }
        for i in 0..n {
            for j in 0..n {
                let m = minutes[i * n + j];
                if !m.is_finite() || m < 0.0 {
                    return Err(OdpError::Input(format!("entry ({i},{j}) = {m} is not a valid time")));
                }
                if i == j && m != 0.0 {
                    return Err(OdpError::Input(format!("diagonal entry ({i},{i}) must be 0")));
                }
            }
        }
        let mut out = Self {
            n,
            minutes,
            metric: None,
        };
        out.metric = Some(out.check_triangle_inequality());
        Ok(out)
    }

    #[inline]
    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.minutes[from * self.n + to]
    }

    pub fn n_locations(&self) -> usize {
        self.n
    }

    /// Depot-to-location time, the "direct" delivery time of an order.
    #[inline]
    pub fn direct(&self, dest: usize) -> f64 {
        self.get(DEPOT, dest)
    }

    /// Whether `m[i][k] <= m[i][j] + m[j][k]` holds for every triple.
    pub fn is_metric(&self) -> bool {
        self.metric.unwrap_or_else(|| self.check_triangle_inequality())
    }

    fn check_triangle_inequality(&self) -> bool {
        let n = self.n;
        for i in 0..n {
            for j in 0..n {
                let ij = self.get(i, j);
                for k in 0..n {
                    if self.get(i, k) > ij + self.get(j, k) {
                        return false;
                    }
                }
            }
        }
        true
    }

    /// Copy with every entry rounded to `decimals` places, so a CSV export
    /// at that precision reloads to the identical matrix.
    pub fn rounded(&self, decimals: i32) -> Self {
        let scale = 10f64.powi(decimals);
        let minutes = self
            .minutes
            .iter()
            .map(|m| (m * scale).round() / scale)
            .collect();
        let mut out = Self {
            n: self.n,
            minutes,
            metric: None,
        };
        out.metric = Some(out.check_triangle_inequality());
        out
    }

    pub fn to_csv_string(&self) -> String {
        let mut s = String::new();
        for i in 0..self.n {
            for j in 0..self.n {
                if j > 0 {
                    s.push(',');
                }
                let _ = write!(s, "{:.6}", self.get(i, j));
            }
            s.push('\n');
        }
        s
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string()).map_err(|e| OdpError::io(path, e))
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| OdpError::io(path, e))?;
        let mut rows = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row = line
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| OdpError::Parse {
                    path: path.to_path_buf(),
                    line: idx as u64 + 1,
                    message: e.to_string(),
                })?;
            rows.push(row);
        }
        Self::from_rows(rows)
    }
}

/// Base great-circle travel minutes between two locations at `speed_kmh`.
pub fn base_minutes(a: &Location, b: &Location, speed_kmh: f64) -> Result<f64> {
    Ok(haversine_km(a.coord(), b.coord())? / speed_kmh * 60.0)
}

/// Builds the noisy travel-time matrix: each ordered pair gets its base
/// time inflated by an independent uniform draw from `[0, noise_fraction]`.
pub fn build_travel_times(
    locations: &LocationSet,
    speed_kmh: f64,
    noise_fraction: f64,
    seed: u64,
) -> Result<TravelTimeMatrix> {
    if !(speed_kmh > 0.0) || !speed_kmh.is_finite() {
        return Err(OdpError::Config(format!("courier speed must be positive, got {speed_kmh}")));
    }
    if !(0.0..=1.0).contains(&noise_fraction) {
        return Err(OdpError::Config(format!(
            "noise fraction must lie in [0, 1], got {noise_fraction}"
        )));
    }
    let locs = locations.as_slice();
    let n = locs.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut minutes = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let base = base_minutes(&locs[i], &locs[j], speed_kmh)?;
            let u: f64 = if noise_fraction > 0.0 {
                rng.random_range(0.0..=noise_fraction)
            } else {
                0.0
            };
            minutes[i * n + j] = base * (1.0 + u);
        }
    }
    TravelTimeMatrix::from_flat(n, minutes)
}

fn offset_km(origin: LatLon, east_km: f64, north_km: f64) -> LatLon {
    let km_per_deg = EARTH_RADIUS_KM * std::f64::consts::PI / 180.0;
    LatLon::new(
        origin.lat + north_km / km_per_deg,
        origin.lon + east_km / (km_per_deg * origin.lat.to_radians().cos()),
    )
}

/// Synthetic city around [`DEFAULT_ORIGIN`]; see [`generate_city_at`].
pub fn generate_city(
    n_locations: usize,
    spread_km: f64,
    cluster_count: usize,
    seed: u64,
) -> Result<LocationSet> {
    generate_city_at(DEFAULT_ORIGIN, n_locations, spread_km, cluster_count, seed)
}

/// Depot at `origin`, `n_locations - 1` delivery points drawn from Gaussian
/// clusters whose centres lie within half the spread, every point kept
/// within `spread_km` of the depot. Popularity weights are Pareto(1.5).
pub fn generate_city_at(
    origin: LatLon,
    n_locations: usize,
    spread_km: f64,
    cluster_count: usize,
    seed: u64,
) -> Result<LocationSet> {
    if n_locations < 2 {
        return Err(OdpError::Config("a city needs at least 2 locations".into()));
    }
    if !(spread_km > 0.0) || !spread_km.is_finite() {
        return Err(OdpError::Config(format!("spread must be positive, got {spread_km}")));
    }
    if cluster_count == 0 {
        return Err(OdpError::Config("cluster count must be at least 1".into()));
    }
    origin.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tau = std::f64::consts::TAU;
    let centres: Vec<(f64, f64)> = (0..cluster_count)
        .map(|_| {
            let r = 0.5 * spread_km * rng.random::<f64>().sqrt();
            let theta = tau * rng.random::<f64>();
            (r * theta.cos(), r * theta.sin())
        })
        .collect();
    let jitter = Normal::new(0.0, spread_km / 4.0).expect("positive sd");
    let popularity = Pareto::new(1.0, 1.5).expect("valid pareto");

    let mut locations = vec![Location {
        id: DEPOT,
        lat: origin.lat,
        lon: origin.lon,
        weight: 0.0,
    }];
    for id in 1..n_locations {
        let (cx, cy) = centres[rng.random_range(0..cluster_count)];
        let (mut x, mut y) = (cx + jitter.sample(&mut rng), cy + jitter.sample(&mut rng));
        let mut tries = 0;
        while x.hypot(y) > spread_km && tries < 64 {
            x = cx + jitter.sample(&mut rng);
            y = cy + jitter.sample(&mut rng);
            tries += 1;
        }
        let r = x.hypot(y);
        if r > spread_km {
            x *= spread_km / r;
            y *= spread_km / r;
        }
        let p = offset_km(origin, x, y);
        locations.push(Location {
            id,
            lat: p.lat,
            lon: p.lon,
            weight: popularity.sample(&mut rng),
        });
    }
    LocationSet::new(locations)
}
