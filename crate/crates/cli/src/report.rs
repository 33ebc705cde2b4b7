//! Report schemas and the arithmetic behind "% Filled" and "% Incr.".

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use odp_core::ceilings::CeilingReport;
use odp_core::sim::EpisodeMetrics;

use crate::config::CeilingKind;
use crate::{CliError, CliResult};

/// Mean and sample standard deviation (n - 1 denominator; 0 below two
/// values).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Stat { mean: 0.0, std: 0.0 };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Stat { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayReport {
    pub day: usize,
    pub arrivals: usize,
    pub matched: usize,
    pub fulfilled: usize,
    pub lost: usize,
    pub in_flight_at_end: usize,
    /// Fulfilled share of arrivals, percent.
    pub fill_pct: f64,
    pub avg_return_time: f64,
    pub avg_trip_orders: f64,
    pub avg_inflight_queue: f64,
    pub avg_couriers_at_depot: f64,
    pub avg_direct_time: f64,
    pub late_deliveries: usize,
    pub capacity_violations: usize,
    pub shift_violations: usize,
}

impl DayReport {
    pub fn from_metrics(day: usize, m: &EpisodeMetrics) -> Self {
        Self {
            day,
            arrivals: m.total_arrivals,
            matched: m.total_matched,
            fulfilled: m.total_fulfilled,
            lost: m.total_lost,
            in_flight_at_end: m.in_flight_at_end,
            fill_pct: pct(m.total_fulfilled as f64, m.total_arrivals as f64),
            avg_return_time: m.avg_return_time,
            avg_trip_orders: m.avg_trip_orders,
            avg_inflight_queue: m.avg_inflight_queue,
            avg_couriers_at_depot: m.avg_couriers_at_depot,
            avg_direct_time: m.avg_direct_time,
            late_deliveries: m.late_deliveries,
            capacity_violations: m.capacity_violations,
            shift_violations: m.shift_violations,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub arrivals: Stat,
    pub fulfilled: Stat,
    pub fill_pct: Stat,
    pub avg_return_time: Stat,
    pub avg_trip_orders: Stat,
    pub avg_inflight_queue: Stat,
    pub avg_couriers_at_depot: Stat,
    pub avg_direct_time: Stat,
}

impl Aggregate {
    pub fn of(days: &[DayReport]) -> Self {
        let col = |f: fn(&DayReport) -> f64| Stat::of(&days.iter().map(f).collect::<Vec<_>>());
        Self {
            arrivals: col(|d| d.arrivals as f64),
            fulfilled: col(|d| d.fulfilled as f64),
            fill_pct: col(|d| d.fill_pct),
            avg_return_time: col(|d| d.avg_return_time),
            avg_trip_orders: col(|d| d.avg_trip_orders),
            avg_inflight_queue: col(|d| d.avg_inflight_queue),
            avg_couriers_at_depot: col(|d| d.avg_couriers_at_depot),
            avg_direct_time: col(|d| d.avg_direct_time),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seed: u64,
    pub policy: String,
    /// Parameter hash of the checkpoint used, if the policy has one.
    pub checkpoint: Option<String>,
    pub days: Vec<DayReport>,
    pub aggregate: Aggregate,
}

/// Per-epoch series of every day, one row per (day, epoch).
pub fn epochs_csv(seed: u64, policy: &str, metrics: &[EpisodeMetrics]) -> String {
    let mut s = format!("# seed={seed} policy={policy}\nday,epoch,seen,matched,fulfilled,lost,couriers_at_depot\n");
    for (d, m) in metrics.iter().enumerate() {
        for t in 0..m.seen.len() {
            let _ = writeln!(
                s,
                "{d},{t},{},{},{},{},{}",
                m.seen[t], m.matched[t], m.fulfilled[t], m.lost[t], m.couriers_at_depot[t]
            );
        }
    }
    s
}

/// `num / den * 100`, with an empty denominator counting as fully served.
pub fn pct(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        100.0
    } else {
        num / den * 100.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub policy: String,
    pub mean_fulfilled: f64,
    pub std_fulfilled: f64,
    /// Mean over days of fulfilled / ceiling * 100.
    pub pct_filled_mean: f64,
    pub pct_filled_std: f64,
    /// Reference policy's mean "% Filled" minus this policy's; equal to the
    /// mean over days of (reference - policy) / ceiling * 100.
    pub pct_incr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub seed: u64,
    pub ceiling: CeilingKind,
    pub reference: String,
    pub ceiling_mean: f64,
    pub rows: Vec<CompareRow>,
}

pub const COMPARE_CSV_HEADER: &str = "policy,mean_fulfilled,std_fulfilled,pct_filled_mean,pct_filled_std,pct_incr";

/// Per-day ceiling values of the chosen kind.
pub fn ceiling_values(report: &CeilingReport, kind: CeilingKind) -> CliResult<Vec<f64>> {
    report
        .days
        .iter()
        .map(|d| match kind {
            CeilingKind::Direct => Ok(d.direct as f64),
            CeilingKind::Fixed => d.fixed.map(|f| f as f64).ok_or_else(|| {
                CliError::Missing(format!(
                    "day {} has no fixed-ceiling value; run `odp ceiling --ceiling fixed` first",
                    d.day
                ))
            }),
        })
        .collect()
}

/// Builds the comparison table. `evals` must include `reference`.
pub fn compare(
    seed: u64,
    kind: CeilingKind,
    ceiling: &[f64],
    evals: &[EvalReport],
    reference: &str,
) -> CliResult<CompareReport> {
    let filled = |e: &EvalReport| -> CliResult<Vec<f64>> {
        if e.days.len() != ceiling.len() {
            return Err(CliError::Usage(format!(
                "evaluation of {} covers {} days but the ceiling report covers {}; rerun both on the same data",
                e.policy,
                e.days.len(),
                ceiling.len()
            )));
        }
        Ok(e.days.iter().zip(ceiling).map(|(d, &c)| pct(d.fulfilled as f64, c)).collect())
    };
    let reference_eval = evals
        .iter()
        .find(|e| e.policy == reference)
        .ok_or_else(|| CliError::Missing(format!("no evaluation of reference policy {reference}")))?;
    let reference_mean = Stat::of(&filled(reference_eval)?).mean;
    let rows = evals
        .iter()
        .map(|e| {
            let f = Stat::of(&filled(e)?);
            let counts = Stat::of(&e.days.iter().map(|d| d.fulfilled as f64).collect::<Vec<_>>());
            Ok(CompareRow {
                policy: e.policy.clone(),
                mean_fulfilled: counts.mean,
                std_fulfilled: counts.std,
                pct_filled_mean: f.mean,
                pct_filled_std: f.std,
                pct_incr: reference_mean - f.mean,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    Ok(CompareReport {
        seed,
        ceiling: kind,
        reference: reference.into(),
        ceiling_mean: Stat::of(ceiling).mean,
        rows,
    })
}

pub fn compare_csv(report: &CompareReport) -> String {
    let mut s = format!("# seed={} ceiling={} reference={}\n{COMPARE_CSV_HEADER}\n", report.seed, report.ceiling, report.reference);
    for r in &report.rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.policy, r.mean_fulfilled, r.std_fulfilled, r.pct_filled_mean, r.pct_filled_std, r.pct_incr
        );
    }
    s
}
