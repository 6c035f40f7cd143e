use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::experiment::{run_experiment_with, RunOptions};
use super::workload::{Workload, WorkloadKind};
use crate::config::{EvictAlgo, OramConfig};
use crate::{OramError, Result};

/// `k` from `M ≤ N^k` and the failure exponent `c`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundParams {
    pub k: f64,
    pub c: f64,
}

impl Default for BoundParams {
    fn default() -> Self {
        BoundParams { k: 1.0, c: 2.0 }
    }
}

/// `√N + (k+c)·ln N`.
pub fn partition_bound(n: u64, b: BoundParams) -> f64 {
    let n = n as f64;
    n.sqrt() + (b.k + b.c) * n.ln()
}

/// `√N + 4·√(k+c)·N^¼·√(ln N)`.
pub fn cache_bound(n: u64, b: BoundParams) -> f64 {
    let n = n as f64;
    n.sqrt() + 4.0 * (b.k + b.c).sqrt() * n.powf(0.25) * n.ln().sqrt()
}

/// `ρ = p(1−q) / (q(1−p))`.
pub fn slot_rho(p: f64, q: f64) -> f64 {
    p * (1.0 - q) / (q * (1.0 - p))
}

#[derive(Clone, Debug, PartialEq)]
pub struct MarkovReport {
    pub p: f64,
    pub q: f64,
    pub rho: f64,
    pub steps: u64,
    /// Fraction of steps spent at each occupancy.
    pub empirical: Vec<f64>,
    pub tv_distance: f64,
    pub empirical_mean: f64,
    /// `ρ/(1−ρ)`.
    pub expected_mean: f64,
}

/// Occupancy of one cache slot: each step a block arrives with probability
/// `p`, then an eviction removes one (if any) with probability `q`.
pub fn simulate_slot_chain(p: f64, q: f64, steps: u64, seed: u64) -> Result<MarkovReport> {
    if !(0.0 < p && p < q && q < 1.0) {
        return Err(OramError::Config(format!("need 0 < p < q < 1, got p = {p}, q = {q}")));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut counts: Vec<u64> = vec![0];
    let mut occ = 0usize;
    for _ in 0..steps {
        if rng.gen_bool(p) {
            occ += 1;
        }
        if rng.gen_bool(q) && occ > 0 {
            occ -= 1;
        }
        if occ >= counts.len() {
            counts.resize(occ + 1, 0);
        }
        counts[occ] += 1;
    }
    let rho = slot_rho(p, q);
    let empirical: Vec<f64> = counts.iter().map(|&c| c as f64 / steps as f64).collect();
    let mut tv = 0.0;
    let mut covered = 0.0;
    for (i, e) in empirical.iter().enumerate() {
        let pi = rho.powi(i as i32) * (1.0 - rho);
        covered += pi;
        tv += (e - pi).abs();
    }
    tv += 1.0 - covered;
    let empirical_mean = empirical.iter().enumerate().map(|(i, e)| i as f64 * e).sum();
    Ok(MarkovReport {
        p,
        q,
        rho,
        steps,
        empirical,
        tv_distance: tv / 2.0,
        empirical_mean,
        expected_mean: rho / (1.0 - rho),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundCheck {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub passed: bool,
}

impl BoundCheck {
    fn at_most(name: &str, value: f64, bound: f64) -> BoundCheck {
        BoundCheck { name: name.into(), value, bound, passed: value <= bound }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundsReport {
    pub markov: Option<MarkovReport>,
    pub checks: Vec<BoundCheck>,
}

impl BoundsReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundsOptions {
    pub params: BoundParams,
    /// Requests of the full-system run; `3N` when `None`.
    pub ops: Option<u64>,
    pub markov_steps: u64,
}

impl Default for BoundsOptions {
    fn default() -> Self {
        BoundsOptions { params: BoundParams::default(), ops: None, markov_steps: 10_000_000 }
    }
}

/// Checks a round-robin run of `cfg` against the cache, partition-load and
/// scheduling bounds, plus the single-slot chain when eviction is random.
pub fn validate_bounds(cfg: &OramConfig, opts: BoundsOptions) -> Result<BoundsReport> {
    let geom = cfg.geometry()?;
    let partitions = geom.partitions as f64;
    let markov = if cfg.evict_algo == EvictAlgo::Random && cfg.nu >= 2.0 && geom.partitions > 2 {
        let p = 1.0 / partitions;
        Some(simulate_slot_chain(p, cfg.nu / partitions, opts.markov_steps, cfg.seed)?)
    } else {
        None
    };
    let mut checks = Vec::new();
    if let Some(m) = &markov {
        checks.push(BoundCheck::at_most("slot chain total variation", m.tv_distance, 0.02));
        let rel = (m.empirical_mean - m.expected_mean).abs() / m.expected_mean;
        checks.push(BoundCheck::at_most("slot chain mean relative error", rel, 0.05));
        checks.push(BoundCheck::at_most("expected total cache", m.expected_mean * partitions, (cfg.n as f64).sqrt()));
    }

    let workload = Workload::new(WorkloadKind::RoundRobin, opts.ops.unwrap_or(3 * cfg.n)).seed(cfg.seed);
    let (rec, _) = run_experiment_with(cfg, &workload, RunOptions::default())?;
    let sqrt_n = (cfg.n as f64).sqrt();
    checks.push(BoundCheck::at_most("cache high-water", rec.cache_hw as f64, cache_bound(cfg.n, opts.params)));
    checks.push(BoundCheck::at_most(
        "partition load (analytic)",
        rec.max_partition_load as f64,
        partition_bound(cfg.n, opts.params),
    ));
    checks.push(BoundCheck::at_most("partition load (1.15 sqrt N)", rec.max_partition_load as f64, 1.15 * sqrt_n));
    if let (Some(lat), Some(budget)) = (rec.max_job_latency, rec.step_budget) {
        checks.push(BoundCheck::at_most("job latency", lat as f64, partitions));
        checks.push(BoundCheck::at_most("step work", rec.max_step_work as f64, budget as f64));
    }
    Ok(BoundsReport { markov, checks })
}
