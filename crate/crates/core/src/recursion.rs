//! Recursive position map.
//!
//! The partition number of block `id` is stored in entry `id mod α` of block
//! `⌊id/α⌋` of a smaller ORAM, which may itself be recursive, until the
//! innermost map has at most `recursion_threshold` entries and is held in
//! client memory.

use std::collections::HashMap;

use crate::blockstore::BlockStore;
use crate::config::{Geometry, OramConfig, PayloadMode, PosMapMode, SlotChoice};
use crate::framework::{Oram, Placement};
use crate::posmap::Position;
use crate::{OramError, Result};

/// Bytes per packed map entry: the partition number plus one, zero for never written.
pub const ENTRY_LEN: usize = 4;

/// `max(2, ⌊B / (2·⌈log₂ N⌉)⌋)`.
pub fn alpha_for(n: u64, block_size: usize) -> u32 {
    let log = (64 - n.saturating_sub(1).leading_zeros()).max(1) as usize;
    (block_size / (2 * log)).max(2) as u32
}

/// Block counts of the data ORAM and of each position-map ORAM below it.
pub fn capacities(n: u64, alpha: u32, threshold: u64) -> Vec<u64> {
    let mut caps = vec![n];
    while *caps.last().unwrap() > threshold.max(1) {
        let last = *caps.last().unwrap();
        caps.push(last.div_ceil(alpha as u64));
    }
    caps
}

pub(crate) struct SplitMap {
    pub dir: Box<Oram>,
    pub alpha: u32,
    locators: Vec<HashMap<u64, (u8, u32)>>,
}

impl SplitMap {
    pub fn locator(&self, p: u32, id: u64) -> Option<(u8, u32)> {
        self.locators[p as usize].get(&id).copied()
    }

    pub fn set_locator(&mut self, p: u32, id: u64, level: u8, index: u32) {
        self.locators[p as usize].insert(id, (level, index));
    }

    pub fn locator_entries(&self) -> u64 {
        self.locators.iter().map(|m| m.len() as u64).sum()
    }

    /// Reads the old position of `id` and records partition `r` in one
    /// access to the map ORAM.
    pub fn lookup_and_assign(&mut self, id: u64, r: u32, skip_update: bool) -> Result<Position> {
        let block = id / self.alpha as u64;
        let off = (id % self.alpha as u64) as usize * ENTRY_LEN;
        let mut old = 0u32;
        self.dir.update(block, |payload| {
            old = u32::from_le_bytes(payload[off..off + ENTRY_LEN].try_into().unwrap());
            if !skip_update {
                payload[off..off + ENTRY_LEN].copy_from_slice(&(r + 1).to_le_bytes());
            }
        })?;
        if old == 0 {
            return Ok(Position::Zeroed);
        }
        let p = old - 1;
        if p as usize >= self.locators.len() {
            return Err(OramError::Integrity(format!("map entry of block {id} names partition {p}")));
        }
        Ok(match self.locators[p as usize].remove(&id) {
            Some((level, index)) => Position::Server { p, level, index },
            None => Position::CacheSlot(p),
        })
    }
}

pub(crate) fn build_placement(
    cfg: &OramConfig,
    geom: &Geometry,
    map_store: &mut dyn FnMut(usize) -> Result<Box<dyn BlockStore>>,
    warnings: &mut Vec<String>,
    depth: usize,
) -> Result<Placement> {
    let alpha = cfg.alpha.unwrap_or_else(|| alpha_for(cfg.n, cfg.block_size));
    let log = (64 - cfg.n.saturating_sub(1).leading_zeros()).max(1) as usize;
    if depth == 0 && cfg.block_size <= 2 * log {
        warnings.push(format!(
            "block size {} does not exceed 2·log2 N = {}; alpha clamps to {alpha}",
            cfg.block_size,
            2 * log
        ));
    }
    if alpha < 2 {
        return Err(OramError::Config("alpha must be at least 2".into()));
    }
    if ENTRY_LEN * alpha as usize > cfg.block_size {
        return Err(OramError::Config(format!(
            "{alpha} map entries of {ENTRY_LEN} bytes do not fit a {}-byte block",
            cfg.block_size
        )));
    }
    let caps = capacities(cfg.n, alpha, cfg.recursion_threshold);
    if caps.len() == 1 {
        return Oram::plain_placement(cfg, geom);
    }
    let dir_cfg = OramConfig {
        n: caps[1],
        payload_mode: PayloadMode::Full,
        posmap: PosMapMode::Plain,
        slot_choice: SlotChoice::Random,
        partitions: None,
        alpha: Some(alpha),
        seed: cfg.seed ^ (depth as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15),
        ..cfg.clone()
    };
    let store = map_store(depth + 1)?;
    let dir = Oram::build(dir_cfg, store, map_store, depth + 1)?;
    Ok(Placement::Split(SplitMap {
        dir: Box::new(dir),
        alpha,
        locators: vec![HashMap::new(); geom.partitions as usize],
    }))
}

/// Client and server footprint of one ORAM in the stack.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelReport {
    pub depth: usize,
    pub capacity: u64,
    pub partitions: u32,
    pub cache_hw: u64,
    pub shuffle_buffer_hw: u32,
    pub peak_server_blocks: u64,
    pub blocks_transferred: u64,
    pub partition_reads: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StorageReport {
    pub alpha: Option<u32>,
    /// Data ORAM first.
    pub levels: Vec<LevelReport>,
    /// Entries of the position map held in client memory.
    pub resident_map_entries: u64,
    /// Level and index entries of server-resident blocks kept by the client.
    pub locator_entries: u64,
    /// Largest shuffle buffer any ORAM needed; one buffer serves them all.
    pub shared_shuffle_buffer: u32,
    pub total_cache_hw: u64,
    pub total_peak_server_blocks: u64,
}

pub(crate) fn report(top: &mut Oram) -> Result<StorageReport> {
    let alpha = top.split().map(|s| s.alpha);
    let mut levels = Vec::new();
    let mut locator_entries = 0;
    let mut resident = 0;
    let mut cur = top;
    loop {
        let stats = cur.stats()?;
        levels.push(LevelReport {
            depth: levels.len(),
            capacity: cur.geometry().n,
            partitions: cur.geometry().partitions,
            cache_hw: cur.metrics().cache_hw,
            shuffle_buffer_hw: cur.engine_counters().shuffle_buffer_hw,
            peak_server_blocks: stats.peak_server_blocks,
            blocks_transferred: stats.blocks_total(),
            partition_reads: cur.metrics().partition_reads,
        });
        if let Some(m) = cur.position_map() {
            resident = m.len();
        }
        match cur.split_mut() {
            Some(s) => {
                locator_entries += s.locator_entries();
                cur = &mut s.dir;
            }
            None => break,
        }
    }
    Ok(StorageReport {
        alpha,
        resident_map_entries: resident,
        locator_entries,
        shared_shuffle_buffer: levels.iter().map(|l| l.shuffle_buffer_hw).max().unwrap_or(0),
        total_cache_hw: levels.iter().map(|l| l.cache_hw).sum(),
        total_peak_server_blocks: levels.iter().map(|l| l.peak_server_blocks).sum(),
        levels,
    })
}
