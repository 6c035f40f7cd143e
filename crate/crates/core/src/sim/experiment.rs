use std::time::Instant;

use super::workload::{payload_for, Workload};
use crate::blockstore::{BlockStore, MemStore};
use crate::config::{OramConfig, PayloadMode};
use crate::framework::Oram;
use crate::{Result, TransferStats};

/// Outcome of one simulated run.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentRecord {
    pub n: u64,
    pub block_size: usize,
    pub partitions: u32,
    pub capacity: u32,
    pub nu: f64,
    pub evict: String,
    pub piggyback: bool,
    pub concurrent: bool,
    pub recursive: bool,
    pub compression: bool,
    pub delete_on_read: bool,
    pub payload: String,
    pub workload: String,
    pub ops: u64,
    pub seed: u64,
    /// Blocks transferred per access, over every ORAM of the stack.
    pub overhead: f64,
    pub blocks_up: u64,
    pub blocks_down: u64,
    pub cache_hw: u64,
    pub max_partition_load: u32,
    pub peak_server_blocks: u64,
    /// Most shuffle blocks moved in one time step.
    pub max_step_work: u64,
    pub step_budget: Option<u64>,
    pub max_job_latency: Option<u64>,
    pub latency_violations: Option<u64>,
    pub forced_reshuffles: u64,
    /// Cache, shuffle buffer, pending writes and position map, in blocks.
    pub client_storage_blocks: f64,
    pub depth: usize,
    pub wall_ms: Option<u128>,
}

impl ExperimentRecord {
    pub fn sqrt_n(&self) -> f64 {
        (self.n as f64).sqrt()
    }

    pub fn cache_over_sqrt_n(&self) -> f64 {
        self.cache_hw as f64 / self.sqrt_n()
    }

    pub fn load_over_sqrt_n(&self) -> f64 {
        self.max_partition_load as f64 / self.sqrt_n()
    }

    pub fn server_over_n(&self) -> f64 {
        self.peak_server_blocks as f64 / self.n as f64
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub wall_time: bool,
    pub record_steps: bool,
}

pub fn run_experiment(cfg: &OramConfig, workload: &Workload) -> Result<ExperimentRecord> {
    run_experiment_with(cfg, workload, RunOptions::default()).map(|(r, _)| r)
}

/// Runs `workload` and returns the record plus the raw server statistics.
pub fn run_experiment_with(
    cfg: &OramConfig,
    workload: &Workload,
    opts: RunOptions,
) -> Result<(ExperimentRecord, TransferStats)> {
    run_experiment_on(cfg, workload, Box::new(MemStore::new()), opts)
}

/// Like [`run_experiment_with`] against an arbitrary store for the data ORAM.
pub fn run_experiment_on(
    cfg: &OramConfig,
    workload: &Workload,
    store: Box<dyn BlockStore>,
    opts: RunOptions,
) -> Result<(ExperimentRecord, TransferStats)> {
    let mut oram = Oram::new(cfg.clone(), store)?;
    if opts.record_steps {
        oram.record_steps();
    }
    let len = oram.payload_len();
    let started = Instant::now();
    for (i, req) in workload.requests(cfg.n)?.enumerate() {
        if req.write {
            oram.write(req.id, payload_for(i as u64, len))?;
        } else {
            oram.read(req.id)?;
        }
    }
    let wall = started.elapsed().as_millis();
    record_of(&mut oram, workload, opts.wall_time.then_some(wall))
}

pub(crate) fn record_of(
    oram: &mut Oram,
    workload: &Workload,
    wall_ms: Option<u128>,
) -> Result<(ExperimentRecord, TransferStats)> {
    let cfg = oram.config().clone();
    let geom = oram.geometry().clone();
    let stats = oram.stats()?;
    let report = oram.storage_report()?;
    let total = oram.total_blocks_transferred()?;
    let accesses = oram.metrics().accesses.max(1);
    let amortizer = oram.amortizer_stats().cloned();
    let counters = oram.engine_counters().clone();
    let max_step_work = match &amortizer {
        Some(a) => a.max_step_work,
        None => oram.metrics().max_access_work,
    };
    let pending = amortizer.as_ref().map_or(0, |a| a.pending_hw);
    let posmap_bytes = oram.position_map().map_or(0, |m| m.memory_estimate().actual_bytes) as f64;
    let client_storage_blocks = report.total_cache_hw as f64
        + report.shared_shuffle_buffer as f64
        + pending as f64
        + posmap_bytes / cfg.block_size.max(1) as f64;
    let record = ExperimentRecord {
        n: cfg.n,
        block_size: cfg.block_size,
        partitions: geom.partitions,
        capacity: geom.capacity,
        nu: cfg.nu,
        evict: cfg.evict_algo.to_string(),
        piggyback: cfg.piggyback,
        concurrent: cfg.concurrent,
        recursive: cfg.recursive,
        compression: cfg.compression,
        delete_on_read: cfg.delete_on_read,
        payload: match cfg.payload_mode {
            PayloadMode::Full => "full".into(),
            PayloadMode::MetadataOnly => "metadata".into(),
        },
        workload: workload.kind.to_string(),
        ops: workload.ops,
        seed: cfg.seed,
        overhead: total as f64 / accesses as f64,
        blocks_up: stats.blocks_up,
        blocks_down: stats.blocks_down,
        cache_hw: oram.metrics().cache_hw,
        max_partition_load: counters.max_partition_load,
        peak_server_blocks: stats.peak_server_blocks,
        max_step_work,
        step_budget: oram.step_budget(),
        max_job_latency: amortizer.as_ref().map(|a| a.max_latency),
        latency_violations: amortizer.as_ref().map(|a| a.latency_violations),
        forced_reshuffles: counters.forced_reshuffles,
        client_storage_blocks,
        depth: oram.depth(),
        wall_ms,
    };
    Ok((record, stats))
}

const COLUMNS: &[&str] = &[
    "n",
    "block_size",
    "partitions",
    "capacity",
    "nu",
    "evict",
    "piggyback",
    "concurrent",
    "recursive",
    "compression",
    "delete_on_read",
    "payload",
    "workload",
    "ops",
    "seed",
    "overhead",
    "blocks_up",
    "blocks_down",
    "cache_hw",
    "cache_over_sqrt_n",
    "max_partition_load",
    "load_over_sqrt_n",
    "peak_server_blocks",
    "server_over_n",
    "max_step_work",
    "step_budget",
    "max_job_latency",
    "latency_violations",
    "forced_reshuffles",
    "client_storage_blocks",
    "depth",
];

/// Formats `x` with six significant digits.
pub fn sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (5 - magnitude).max(0) as usize;
    let s = format!("{x:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn csv_header(wall_time: bool) -> String {
    let mut cols = COLUMNS.join(",");
    if wall_time {
        cols.push_str(",wall_ms");
    }
    cols
}

pub fn csv_row(r: &ExperimentRecord, wall_time: bool) -> String {
    let fields = [
        r.n.to_string(),
        r.block_size.to_string(),
        r.partitions.to_string(),
        r.capacity.to_string(),
        sig6(r.nu),
        r.evict.clone(),
        r.piggyback.to_string(),
        r.concurrent.to_string(),
        r.recursive.to_string(),
        r.compression.to_string(),
        r.delete_on_read.to_string(),
        r.payload.clone(),
        r.workload.clone(),
        r.ops.to_string(),
        r.seed.to_string(),
        sig6(r.overhead),
        r.blocks_up.to_string(),
        r.blocks_down.to_string(),
        r.cache_hw.to_string(),
        sig6(r.cache_over_sqrt_n()),
        r.max_partition_load.to_string(),
        sig6(r.load_over_sqrt_n()),
        r.peak_server_blocks.to_string(),
        sig6(r.server_over_n()),
        r.max_step_work.to_string(),
        opt(r.step_budget),
        opt(r.max_job_latency),
        opt(r.latency_violations),
        r.forced_reshuffles.to_string(),
        sig6(r.client_storage_blocks),
        r.depth.to_string(),
    ];
    let mut row = fields.join(",");
    if wall_time {
        row.push(',');
        row.push_str(&opt(r.wall_ms));
    }
    row
}

/// Header plus one row per record.
pub fn to_csv(records: &[ExperimentRecord], wall_time: bool) -> String {
    let mut out = csv_header(wall_time);
    out.push('\n');
    for r in records {
        out.push_str(&csv_row(r, wall_time));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::WorkloadKind;

    #[test]
    fn six_significant_digits() {
        assert_eq!(sig6(22.51234567), "22.5123");
        assert_eq!(sig6(0.000123456789), "0.000123457");
        assert_eq!(sig6(1234567.0), "1234567");
        assert_eq!(sig6(2.0), "2");
        assert_eq!(sig6(0.0), "0");
    }

    #[test]
    fn header_matches_row_width() {
        let cfg = OramConfig::builder(64).block_size(8).seed(1).build().unwrap();
        let r = run_experiment(&cfg, &Workload::new(WorkloadKind::Uniform, 200)).unwrap();
        let csv = to_csv(&[r], false);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0].split(',').count(), lines[1].split(',').count());
    }

    #[test]
    fn same_seed_same_csv() {
        let cfg = OramConfig::builder(256).block_size(8).seed(9).concurrent(true).build().unwrap();
        let w = Workload::new(WorkloadKind::RoundRobin, 768).seed(2);
        let a = to_csv(&[run_experiment(&cfg, &w).unwrap()], false);
        let b = to_csv(&[run_experiment(&cfg, &w).unwrap()], false);
        assert_eq!(a, b);
    }

    #[test]
    fn no_eviction_lets_the_cache_grow() {
        let cfg = OramConfig::builder(256).block_size(8).nu(0.0).piggyback(false).seed(4).build().unwrap();
        let mut oram = Oram::in_memory(cfg).unwrap();
        let mut last = 0;
        for id in 0..256 {
            oram.read(id).unwrap();
            let now = oram.metrics().cache_blocks;
            assert!(now > last);
            last = now;
        }
        assert_eq!(last, 256);
    }
}
