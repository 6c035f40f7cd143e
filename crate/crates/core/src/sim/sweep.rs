use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use super::experiment::{csv_header, csv_row, run_experiment, ExperimentRecord};
use super::workload::Workload;
use crate::config::OramConfig;
use crate::{OramError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// Background eviction rate ν.
    EvictionRate,
    /// Client storage of `k·√N` blocks; each point reports the cheapest
    /// eviction rate from [`NU_GRID`] whose measured storage fits.
    ClientStorage,
}

impl FromStr for Axis {
    type Err = OramError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "nu" | "eviction-rate" | "eviction_rate" => Ok(Axis::EvictionRate),
            "k" | "client-storage" | "client-storage-k" | "client_storage" => Ok(Axis::ClientStorage),
            other => Err(OramError::Config(format!("unknown sweep axis {other:?}"))),
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::EvictionRate => "nu",
            Axis::ClientStorage => "k",
        })
    }
}

/// Eviction rates tried by the client-storage axis.
pub const NU_GRID: &[f64] = &[0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0, 8.0];

#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub value: f64,
    /// `None` when no run fits the client-storage budget.
    pub record: Option<ExperimentRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub axis: Axis,
    pub points: Vec<SweepPoint>,
    /// Eviction axis: cache/√N strictly decreasing. Storage axis: overhead nonincreasing.
    pub monotone: bool,
}

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut out = format!("axis,value,{}\n", csv_header(false));
        let width = csv_header(false).split(',').count();
        for pt in &self.points {
            let row = match &pt.record {
                Some(r) => csv_row(r, false),
                None => vec![""; width].join(","),
            };
            out.push_str(&format!("{},{},{}\n", self.axis, super::sig6(pt.value), row));
        }
        out
    }
}

fn run_grid(base: &OramConfig, workload: &Workload, nus: &[f64]) -> Result<Vec<ExperimentRecord>> {
    nus.par_iter()
        .map(|&nu| run_experiment(&OramConfig { nu, ..base.clone() }, workload))
        .collect()
}

pub fn run_sweep(base: &OramConfig, workload: &Workload, axis: Axis, values: &[f64]) -> Result<SweepResult> {
    let points: Vec<SweepPoint> = match axis {
        _ if values.is_empty() => Vec::new(),
        Axis::EvictionRate => run_grid(base, workload, values)?
            .into_iter()
            .zip(values)
            .map(|(r, &value)| SweepPoint { value, record: Some(r) })
            .collect(),
        Axis::ClientStorage => {
            let runs = run_grid(base, workload, NU_GRID)?;
            let sqrt_n = (base.n as f64).sqrt();
            values
                .iter()
                .map(|&k| {
                    let best = runs
                        .iter()
                        .filter(|r| r.client_storage_blocks <= k * sqrt_n)
                        .min_by(|a, b| a.overhead.total_cmp(&b.overhead).then(a.nu.total_cmp(&b.nu)));
                    SweepPoint { value: k, record: best.cloned() }
                })
                .collect()
        }
    };
    let monotone = match axis {
        Axis::EvictionRate => points.windows(2).all(|w| {
            let (a, b) = (w[0].record.as_ref().unwrap(), w[1].record.as_ref().unwrap());
            (w[0].value < w[1].value) == (a.cache_over_sqrt_n() > b.cache_over_sqrt_n())
        }),
        Axis::ClientStorage => {
            let feasible: Vec<&SweepPoint> = points.iter().filter(|p| p.record.is_some()).collect();
            feasible.windows(2).all(|w| {
                w[0].value > w[1].value || w[0].record.as_ref().unwrap().overhead >= w[1].record.as_ref().unwrap().overhead
            })
        }
    };
    Ok(SweepResult { axis, points, monotone })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::WorkloadKind;

    #[test]
    fn empty_range_gives_header_only() {
        let cfg = OramConfig::builder(64).block_size(8).build().unwrap();
        let w = Workload::new(WorkloadKind::RoundRobin, 10);
        let s = run_sweep(&cfg, &w, Axis::EvictionRate, &[]).unwrap();
        assert_eq!(s.to_csv().lines().count(), 1);
        assert!(s.monotone);
    }

    #[test]
    fn axis_names() {
        assert_eq!("nu".parse::<Axis>().unwrap(), Axis::EvictionRate);
        assert_eq!("client-storage-k".parse::<Axis>().unwrap(), Axis::ClientStorage);
        assert!("x".parse::<Axis>().is_err());
    }
}
