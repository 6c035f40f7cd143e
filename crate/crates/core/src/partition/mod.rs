//! Hierarchical partition ORAM: level state, reads, and reshuffle jobs.
//!
//! A partition owns `L` levels; level `ℓ` holds `2·2^ℓ` slots (the top
//! level `2S`) of which at most half are real. Every read touches each
//! filled level once. Writes are reshuffle jobs that merge the unread part
//! of some levels, plus newly evicted blocks, into a fresh level. Jobs are
//! resumable so the amortizer can spread them over many time steps; the
//! non-concurrent client simply runs each one to completion.

pub mod codec;
mod job;

use rand::Rng;
use rand_chacha::ChaCha20Rng;

use crate::blockstore::{BlockRequest, BlockStore, LevelRef, META_ENTRY_LEN};
use crate::config::{CipherSuite, Geometry, PayloadMode};
use crate::crypto::{LevelCipher, LevelKey, Prp};
use crate::posmap::BlockId;
use crate::{OramError, Result};

pub use job::Job;

/// Index reserved for sealing a level's metadata list.
pub const META_INDEX: u64 = u64::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LevelStatus {
    Unfilled,
    Filled,
    /// Being uploaded by the in-progress job.
    Constructing,
}

pub(crate) struct LevelCrypto {
    pub prp: Prp,
    pub cipher: LevelCipher,
}

pub struct LevelState {
    pub status: LevelStatus,
    /// Filled at setup; holds only dummies and has no key.
    pub virtual_: bool,
    pub epoch: u64,
    pub(crate) crypto: Option<LevelCrypto>,
    pub real_count: u32,
    /// Next unread dummy (`cnt`); dummies occupy buffer indices `k..size`.
    pub next_dummy: u32,
    /// Read flags by buffer index.
    pub fetched: Vec<bool>,
    pub fetched_count: u32,
    /// Buffer indices below this bound hold authenticated blocks; above it
    /// a compressed upload leaves unconstrained filler.
    pub constrained: u32,
    /// Client-resident ids of the real slots (concurrent mode only).
    pub ids: Option<Vec<u64>>,
    /// Real blocks not yet read.
    pub live: u32,
}

impl LevelState {
    fn empty(size: u32) -> LevelState {
        LevelState {
            status: LevelStatus::Unfilled,
            virtual_: false,
            epoch: 0,
            crypto: None,
            real_count: 0,
            next_dummy: 0,
            fetched: vec![false; size as usize],
            fetched_count: 0,
            constrained: size,
            ids: None,
            live: 0,
        }
    }

    pub fn size(&self) -> u32 {
        self.fetched.len() as u32
    }

    pub fn unread(&self) -> u32 {
        self.size() - self.fetched_count
    }

    pub fn is_filled(&self) -> bool {
        self.status == LevelStatus::Filled
    }

    fn reset(&mut self) {
        let epoch = self.epoch;
        *self = LevelState::empty(self.size());
        self.epoch = epoch;
    }

    fn mark_fetched(&mut self, index: u32) -> Result<()> {
        if std::mem::replace(&mut self.fetched[index as usize], true) {
            return Err(OramError::Invariant(format!("slot {index} read twice in epoch {}", self.epoch)));
        }
        self.fetched_count += 1;
        Ok(())
    }

    fn offset(&self, index: u32) -> u32 {
        match &self.crypto {
            Some(c) => c.prp.apply(index as u64).expect("index within level") as u32,
            None => index,
        }
    }
}

pub struct PartitionState {
    pub levels: Vec<LevelState>,
}

impl PartitionState {
    /// Real blocks stored in the partition, including a level under construction.
    pub fn live(&self) -> u32 {
        self.levels.iter().map(|l| l.live).sum()
    }

    /// Bit `ℓ` set when level `ℓ` is filled.
    pub fn fill_pattern(&self) -> u64 {
        self.levels.iter().enumerate().filter(|(_, l)| l.is_filled()).map(|(i, _)| 1u64 << i).sum()
    }
}

/// Where a real block sits inside a partition.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Want {
    pub id: u64,
    pub level: u8,
    pub index: u32,
}

/// Client view of block locations, consulted and updated by reshuffles.
pub trait Locations {
    fn is_current(&self, id: u64, p: u32, level: u8, index: u32) -> bool;
    fn relocate(&mut self, id: u64, p: u32, level: u8, index: u32) -> Result<()>;
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EngineCounters {
    pub reads: u64,
    pub read_blocks: u64,
    pub shuffle_reads: u64,
    pub shuffle_writes: u64,
    pub jobs: u64,
    pub forced_reshuffles: u64,
    pub max_partition_load: u32,
    pub shuffle_buffer_hw: u32,
    pub meta_fetches: u64,
}

pub struct Engine {
    pub geom: Geometry,
    pub store: Box<dyn BlockStore>,
    pub parts: Vec<PartitionState>,
    pub counters: EngineCounters,
    suite: CipherSuite,
    payload_mode: PayloadMode,
    payload_len: usize,
    concurrent: bool,
    compression: bool,
    key_rng: ChaCha20Rng,
}

pub(crate) struct EngineParams {
    pub suite: CipherSuite,
    pub payload_mode: PayloadMode,
    pub payload_len: usize,
    pub concurrent: bool,
    pub compression: bool,
}

impl Engine {
    pub(crate) fn new(geom: Geometry, store: Box<dyn BlockStore>, params: EngineParams, key_rng: ChaCha20Rng) -> Engine {
        let parts = (0..geom.partitions)
            .map(|_| PartitionState { levels: geom.level_sizes.iter().map(|&s| LevelState::empty(s)).collect() })
            .collect();
        Engine {
            geom,
            store,
            parts,
            counters: EngineCounters::default(),
            suite: params.suite,
            payload_mode: params.payload_mode,
            payload_len: params.payload_len,
            concurrent: params.concurrent,
            compression: params.compression,
            key_rng,
        }
    }

    pub fn payload_len(&self) -> usize {
        self.payload_len
    }

    pub fn concurrent(&self) -> bool {
        self.concurrent
    }

    /// Marks the levels in `fill` as virtually filled (setup).
    pub(crate) fn setup_partition(&mut self, p: u32, fill: u64) -> Result<()> {
        let top = self.geom.top();
        if fill >> top & 1 == 0 {
            return Err(OramError::Invariant("initial fill must include the top level".into()));
        }
        for (l, level) in self.parts[p as usize].levels.iter_mut().enumerate() {
            *level = LevelState::empty(level.size());
            if fill >> l & 1 == 1 {
                level.status = LevelStatus::Filled;
                level.virtual_ = true;
            }
        }
        Ok(())
    }

    fn note_load(&mut self, p: u32) -> Result<()> {
        let live = self.parts[p as usize].live();
        self.counters.max_partition_load = self.counters.max_partition_load.max(live);
        if live > self.geom.capacity {
            return Err(OramError::Capacity { partition: p, reals: live, capacity: self.geom.capacity });
        }
        Ok(())
    }

    /// Opens a fetched block, verifying it when it is authenticated.
    fn open(&self, p: u32, level: u8, index: u32, offset: u32, cb: &crate::crypto::CipherBlock) -> Result<Option<(BlockId, Vec<u8>)>> {
        let lvl = &self.parts[p as usize].levels[level as usize];
        if lvl.virtual_ || index >= lvl.constrained {
            return Ok(None);
        }
        let crypto = lvl.crypto.as_ref().ok_or_else(|| OramError::Invariant("filled level without key".into()))?;
        let block = crypto.cipher.open(offset as u64, cb)?;
        if block.payload.len() != self.payload_len {
            return Err(OramError::Integrity(format!("payload of {} bytes", block.payload.len())));
        }
        let expected_real = index < lvl.real_count;
        match (block.id, expected_real) {
            (BlockId::Real(_), true) | (BlockId::Dummy, false) => Ok(Some((block.id, block.payload))),
            _ => Err(OramError::Integrity(format!("slot {index} of level {level} holds an unexpected block"))),
        }
    }

    /// Forces levels that cannot absorb another read to be reshuffled:
    /// returns the lowest such level. Levels read by the in-progress job
    /// are exempt, and when `covered` names the target of a queued job for
    /// this partition, levels up to it only need one spare dummy.
    pub(crate) fn exhausted_level(&self, p: u32, shuffling: &[u8], covered: Option<u8>) -> Option<u8> {
        let part = &self.parts[p as usize];
        for (l, lvl) in part.levels.iter().enumerate() {
            let l = l as u8;
            if !lvl.is_filled() || shuffling.contains(&l) {
                continue;
            }
            if lvl.next_dummy >= lvl.size() {
                return Some(l);
            }
            let queued = covered.is_some_and(|t| l <= t);
            if !queued && lvl.unread() <= self.geom.half(l) {
                return Some(l);
            }
        }
        None
    }

    /// One read from partition `p`: a block from every filled level, in one
    /// batch. `want` names the real block to retrieve, if any; `job` is the
    /// in-progress reshuffle of `p`, whose source levels are read from the
    /// set of blocks it has not fetched yet.
    pub(crate) fn read(&mut self, p: u32, want: Option<Want>, mut job: Option<&mut Job>, rng: &mut ChaCha20Rng) -> Result<Option<Vec<u8>>> {
        enum Route {
            Want,
            Dummy,
            ToJob,
        }
        let mut from_memory = None;
        let mut reqs = Vec::new();
        let mut routes = Vec::new();
        for l in 0..self.geom.levels {
            let lvl = &self.parts[p as usize].levels[l as usize];
            if !lvl.is_filled() {
                continue;
            }
            let wanted_here = want.filter(|w| w.level == l);
            if let Some(src) = job.as_deref_mut().and_then(|j| j.source_mut(l)) {
                if let Some(w) = wanted_here {
                    if let Some(pos) = src.remaining.iter().position(|&i| i == w.index) {
                        src.remaining.remove(pos);
                        reqs.push((l, w.index));
                        routes.push(Route::Want);
                        continue;
                    }
                }
                if !src.remaining.is_empty() {
                    let pick = rng.gen_range(0..src.remaining.len());
                    let i = src.remaining.remove(pick);
                    reqs.push((l, i));
                    routes.push(Route::ToJob);
                }
                if let Some(w) = wanted_here {
                    let payload = job.as_deref_mut().unwrap().take_fetched(w)?;
                    from_memory = Some(payload);
                }
                continue;
            }
            match wanted_here {
                Some(w) => {
                    reqs.push((l, w.index));
                    routes.push(Route::Want);
                }
                None => {
                    let lvl = &mut self.parts[p as usize].levels[l as usize];
                    if lvl.next_dummy >= lvl.size() {
                        return Err(OramError::Invariant(format!("level {l} of partition {p} has no unread dummy")));
                    }
                    let i = lvl.next_dummy;
                    lvl.next_dummy += 1;
                    reqs.push((l, i));
                    routes.push(Route::Dummy);
                }
            }
        }
        if let Some(w) = want {
            let located = reqs.iter().zip(&routes).any(|((l, _), r)| *l == w.level && matches!(r, Route::Want));
            if !located && from_memory.is_none() {
                return Err(OramError::Invariant(format!("block {} not found at level {} of partition {p}", w.id, w.level)));
            }
        }

        let mut batch = Vec::with_capacity(reqs.len());
        for &(l, i) in &reqs {
            let lvl = &mut self.parts[p as usize].levels[l as usize];
            lvl.mark_fetched(i)?;
            batch.push(BlockRequest { level: LevelRef { partition: p, level: l, epoch: lvl.epoch }, offset: lvl.offset(i) });
        }
        let blocks = self.store.fetch_blocks(&batch)?;
        if blocks.len() != batch.len() {
            return Err(OramError::Integrity(format!("server returned {} of {} blocks", blocks.len(), batch.len())));
        }
        self.counters.reads += 1;
        self.counters.read_blocks += batch.len() as u64;

        let mut result = from_memory;
        for (((l, i), route), (req, cb)) in reqs.into_iter().zip(routes).zip(batch.iter().zip(&blocks)) {
            let opened = self.open(p, l, i, req.offset, cb)?;
            match route {
                Route::Dummy => {}
                Route::Want => {
                    let w = want.unwrap();
                    match opened {
                        Some((BlockId::Real(id), payload)) if id == w.id => result = Some(payload),
                        _ => return Err(OramError::Integrity(format!("slot of block {} holds another block", w.id))),
                    }
                    self.parts[p as usize].levels[l as usize].live -= 1;
                }
                Route::ToJob => {
                    if let Some((BlockId::Real(id), payload)) = opened {
                        job.as_deref_mut().unwrap().stash(id, l, i, payload);
                    }
                }
            }
        }
        Ok(result)
    }

    /// Serves a read of a block that sits in the level being uploaded.
    pub(crate) fn take_from_construction(&mut self, p: u32, w: Want, job: &mut Job) -> Result<Vec<u8>> {
        let payload = job.take_constructed(w)?;
        let lvl = &mut self.parts[p as usize].levels[w.level as usize];
        lvl.mark_fetched(w.index)?;
        lvl.live -= 1;
        Ok(payload)
    }

    pub(crate) fn fresh_level_crypto(&mut self, size: u32) -> Result<LevelCrypto> {
        let key = LevelKey::random(&mut self.key_rng);
        Ok(LevelCrypto { prp: Prp::new(&key, size as u64)?, cipher: LevelCipher::new(self.suite, &key) })
    }

    pub(crate) fn encode_meta(ids: impl Iterator<Item = BlockId>) -> Vec<u8> {
        let mut out = Vec::new();
        for id in ids {
            out.extend_from_slice(&id.encode().to_le_bytes());
            out.push(0);
        }
        out
    }

    pub(crate) fn decode_meta(bytes: &[u8], size: u32) -> Result<Vec<BlockId>> {
        if bytes.len() != size as usize * META_ENTRY_LEN {
            return Err(OramError::Integrity(format!("metadata of {} bytes for {size} slots", bytes.len())));
        }
        Ok(bytes
            .chunks_exact(META_ENTRY_LEN)
            .map(|c| BlockId::decode(u64::from_le_bytes(c[..8].try_into().unwrap())))
            .collect())
    }
}
