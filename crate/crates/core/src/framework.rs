//! The client: access, cache slots and eviction.
//!
//! An access moves its block to a fresh uniformly random cache slot `r`
//! (one slot per partition) and reads the partition where the block used to
//! live. Blocks leave the cache through piggybacked eviction into the
//! partition just read and through background eviction at rate `ν`.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::amortizer::{Amortizer, AmortizerStats};
use crate::blockstore::{BlockStore, MemStore, StoreLayout, TransferStats};
use crate::config::{EvictAlgo, Geometry, OramConfig, SlotChoice};
use crate::crypto::{Prf, SEAL_OVERHEAD};
use crate::partition::{Engine, EngineCounters, EngineParams, Job, LevelStatus, Locations, Want};
use crate::posmap::{prf_slot, Position, PositionMap};
use crate::recursion::{self, SplitMap, StorageReport};
use crate::{OramError, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Op {
    Read,
    Write(Vec<u8>),
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct OramMetrics {
    pub accesses: u64,
    pub partition_reads: u64,
    pub partition_writes: u64,
    pub dummy_writes: u64,
    pub cache_blocks: u64,
    /// Most blocks held in cache slots at once, measured after each insertion.
    pub cache_hw: u64,
    /// Shuffle blocks moved by the single most expensive access (non-concurrent).
    pub max_access_work: u64,
    pub forced_reshuffles: u64,
}

/// `Pr[num = k] ∝ ρ^k` on `0..=c` with `c = max(1, ⌈4ν⌉)`, `ρ` fitted so the mean is `ν`.
#[derive(Clone, Debug)]
pub struct BoundedGeometric {
    pub ratio: f64,
    pub max: u32,
    cdf: Vec<f64>,
}

impl BoundedGeometric {
    pub fn new(nu: f64) -> BoundedGeometric {
        let max = ((4.0 * nu).ceil() as u32).max(1);
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..200 {
            let mid = (lo + hi) / 2.0;
            if Self::mean_of(mid, max) < nu {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let ratio = if nu == 0.0 { 0.0 } else { (lo + hi) / 2.0 };
        let weights: Vec<f64> = (0..=max).map(|k| ratio.powi(k as i32)).collect();
        let total: f64 = weights.iter().sum();
        let mut acc = 0.0;
        let cdf = weights
            .iter()
            .map(|w| {
                acc += w / total;
                acc
            })
            .collect();
        BoundedGeometric { ratio, max, cdf }
    }

    fn mean_of(ratio: f64, max: u32) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for k in 0..=max {
            let w = ratio.powi(k as i32);
            num += k as f64 * w;
            den += w;
        }
        num / den
    }

    pub fn mean(&self) -> f64 {
        Self::mean_of(self.ratio, self.max)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        let u: f64 = rng.gen();
        self.cdf.iter().position(|&c| u < c).unwrap_or(self.max as usize) as u32
    }
}

/// Background eviction schedule.
#[derive(Clone, Debug)]
pub struct Evictor {
    pub algo: EvictAlgo,
    pub nu: f64,
    pub dist: BoundedGeometric,
    /// Sequential scan pointer; the first eviction goes to slot 0.
    pub ecnt: u32,
    partitions: u32,
}

impl Evictor {
    pub fn new(algo: EvictAlgo, nu: f64, partitions: u32) -> Evictor {
        Evictor { algo, nu, dist: BoundedGeometric::new(nu), ecnt: partitions - 1, partitions }
    }

    /// Slots to evict after one access.
    pub fn draw<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<u32> {
        match self.algo {
            EvictAlgo::Sequential => {
                let num = self.dist.sample(rng);
                (0..num)
                    .map(|_| {
                        self.ecnt = (self.ecnt + 1) % self.partitions;
                        self.ecnt
                    })
                    .collect()
            }
            EvictAlgo::Random => (0..self.nu as u64).map(|_| rng.gen_range(0..self.partitions)).collect(),
        }
    }
}

/// Where the client keeps track of block positions.
pub(crate) enum Placement {
    Map(PositionMap),
    /// Partition numbers live in a smaller ORAM; level and index stay local.
    Split(SplitMap),
}

impl Locations for Placement {
    fn is_current(&self, id: u64, p: u32, level: u8, index: u32) -> bool {
        match self {
            Placement::Map(m) => m.get(id).is_ok_and(|pos| pos == Position::Server { p, level, index }),
            Placement::Split(s) => s.locator(p, id) == Some((level, index)),
        }
    }

    fn relocate(&mut self, id: u64, p: u32, level: u8, index: u32) -> Result<()> {
        match self {
            Placement::Map(m) => m.set(id, Position::Server { p, level, index }),
            Placement::Split(s) => {
                s.set_locator(p, id, level, index);
                Ok(())
            }
        }
    }
}

#[derive(Clone, Copy)]
enum Stream {
    Slot = 0,
    Evict = 1,
    Engine = 2,
    Keys = 3,
    Setup = 4,
    Prf = 5,
}

fn stream(seed: u64, s: Stream) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(s as u64);
    rng
}

pub struct Oram {
    cfg: OramConfig,
    geom: Geometry,
    engine: Engine,
    placement: Placement,
    slots: Vec<VecDeque<(u64, Vec<u8>)>>,
    amortizer: Option<Amortizer>,
    evictor: Evictor,
    slot_rng: ChaCha20Rng,
    evict_rng: ChaCha20Rng,
    engine_rng: ChaCha20Rng,
    prf: Prf,
    initial_fill: Vec<u64>,
    metrics: OramMetrics,
    trace: Option<Vec<u32>>,
    step_log: Option<Vec<u64>>,
    fault_at: Option<u64>,
    warnings: Vec<String>,
}

impl Oram {
    pub fn in_memory(cfg: OramConfig) -> Result<Oram> {
        Oram::new(cfg, Box::new(MemStore::new()))
    }

    /// Builds an ORAM over `store`. Position-map ORAMs of a recursive
    /// configuration are kept in memory.
    pub fn new(cfg: OramConfig, store: Box<dyn BlockStore>) -> Result<Oram> {
        Oram::with_map_stores(cfg, store, &mut |_| Ok(Box::new(MemStore::new())))
    }

    /// Like [`Oram::new`], taking the store of the position-map ORAM at
    /// each recursion depth (1 is the largest) from `map_store`.
    pub fn with_map_stores(
        cfg: OramConfig,
        store: Box<dyn BlockStore>,
        map_store: &mut dyn FnMut(usize) -> Result<Box<dyn BlockStore>>,
    ) -> Result<Oram> {
        Oram::build(cfg, store, map_store, 0)
    }

    pub(crate) fn build(
        cfg: OramConfig,
        store: Box<dyn BlockStore>,
        map_store: &mut dyn FnMut(usize) -> Result<Box<dyn BlockStore>>,
        depth: usize,
    ) -> Result<Oram> {
        let geom = cfg.geometry()?;
        let mut warnings = Vec::new();
        let placement = if cfg.recursive {
            recursion::build_placement(&cfg, &geom, map_store, &mut warnings, depth)?
        } else {
            Oram::plain_placement(&cfg, &geom)?
        };
        let mut oram = Oram::assemble(cfg, geom, store, placement)?;
        oram.warnings = warnings;
        Ok(oram)
    }

    pub(crate) fn plain_placement(cfg: &OramConfig, geom: &Geometry) -> Result<Placement> {
        let prf = Oram::prf_for(cfg.seed);
        let counters = cfg.slot_choice() == SlotChoice::CounterPrf;
        Ok(Placement::Map(PositionMap::new(cfg.posmap, geom, &prf, counters)?))
    }

    fn prf_for(seed: u64) -> Prf {
        let mut key = [0u8; 32];
        stream(seed, Stream::Prf).fill(&mut key);
        Prf::new(&key)
    }

    fn assemble(cfg: OramConfig, geom: Geometry, mut store: Box<dyn BlockStore>, placement: Placement) -> Result<Oram> {
        let seed = cfg.seed;
        let top = geom.top();
        let mut setup_rng = stream(seed, Stream::Setup);
        let initial_fill: Vec<u64> =
            (0..geom.partitions).map(|_| setup_rng.gen_range(0..geom.fill_patterns()) | 1 << top).collect();
        store.setup(&StoreLayout {
            partitions: geom.partitions,
            level_sizes: geom.level_sizes.clone(),
            block_len: (cfg.payload_len() + SEAL_OVERHEAD) as u32,
            accounted_len: (cfg.block_size + SEAL_OVERHEAD) as u32,
            delete_on_read: cfg.delete_on_read,
            initial_fill: initial_fill.clone(),
        })?;
        let params = EngineParams {
            suite: cfg.cipher_suite(),
            payload_mode: cfg.payload_mode,
            payload_len: cfg.payload_len(),
            concurrent: cfg.concurrent,
            compression: cfg.compression,
        };
        let mut engine = Engine::new(geom.clone(), store, params, stream(seed, Stream::Keys));
        for (p, &fill) in initial_fill.iter().enumerate() {
            engine.setup_partition(p as u32, fill)?;
        }
        let amortizer = cfg.concurrent.then(|| {
            let low = (1u64 << top) - 1;
            Amortizer::new(
                geom.levels,
                geom.capacity,
                cfg.work_factor,
                geom.partitions as u64,
                initial_fill.iter().map(|f| f & low).collect(),
            )
        });
        Ok(Oram {
            slots: vec![VecDeque::new(); geom.partitions as usize],
            evictor: Evictor::new(cfg.evict_algo, cfg.nu, geom.partitions),
            slot_rng: stream(seed, Stream::Slot),
            evict_rng: stream(seed, Stream::Evict),
            engine_rng: stream(seed, Stream::Engine),
            prf: Oram::prf_for(seed),
            cfg,
            geom,
            engine,
            placement,
            amortizer,
            initial_fill,
            metrics: OramMetrics::default(),
            trace: None,
            step_log: None,
            fault_at: None,
            warnings: Vec::new(),
        })
    }

    pub fn config(&self) -> &OramConfig {
        &self.cfg
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geom
    }

    /// Bytes returned by reads.
    pub fn payload_len(&self) -> usize {
        self.engine.payload_len()
    }

    pub fn read(&mut self, id: u64) -> Result<Vec<u8>> {
        self.access(Op::Read, id)
    }

    /// Stores `data` and returns the previous contents.
    pub fn write(&mut self, id: u64, data: Vec<u8>) -> Result<Vec<u8>> {
        self.access(Op::Write(data), id)
    }

    pub fn access(&mut self, op: Op, id: u64) -> Result<Vec<u8>> {
        match op {
            Op::Read => self.update(id, |_| {}),
            Op::Write(data) => {
                if data.len() != self.payload_len() {
                    return Err(OramError::Domain(format!(
                        "payload of {} bytes, blocks carry {}",
                        data.len(),
                        self.payload_len()
                    )));
                }
                let mut data = Some(data);
                self.update(id, move |p| *p = data.take().unwrap())
            }
        }
    }

    /// Reads `id`, lets `f` modify the payload in place and returns the old payload.
    pub fn update(&mut self, id: u64, mut f: impl FnMut(&mut Vec<u8>)) -> Result<Vec<u8>> {
        self.access_with(id, &mut f)
    }

    fn access_with(&mut self, id: u64, f: &mut dyn FnMut(&mut Vec<u8>)) -> Result<Vec<u8>> {
        if id >= self.geom.n {
            return Err(OramError::Domain(format!("block id {id} outside [0, {})", self.geom.n)));
        }
        let parts = self.geom.partitions;
        let skip_update = self.fault_at == Some(self.metrics.accesses);
        let (old, r, zero_partition) = match &mut self.placement {
            Placement::Map(map) => {
                let old = map.get(id)?;
                let (r, zp) = match self.cfg.slot_choice() {
                    SlotChoice::Random => (self.slot_rng.gen_range(0..parts), None),
                    SlotChoice::CounterPrf => {
                        let j = map.counter(id)?.unwrap_or(0);
                        map.bump_counter(id)?;
                        (prf_slot(&self.prf, id, j + 1, parts), Some(prf_slot(&self.prf, id, j, parts)))
                    }
                };
                if !skip_update {
                    map.set(id, Position::CacheSlot(r))?;
                }
                (old, r, zp)
            }
            Placement::Split(s) => {
                let r = self.slot_rng.gen_range(0..parts);
                (s.lookup_and_assign(id, r, skip_update)?, r, None)
            }
        };

        let (p, want, mut payload) = match old {
            Position::Zeroed => {
                let p = zero_partition.unwrap_or_else(|| self.slot_rng.gen_range(0..parts));
                (p, None, Some(vec![0; self.payload_len()]))
            }
            Position::CacheSlot(s) => (s, None, Some(self.take_cached(s, id)?)),
            Position::Server { p, level, index } => (p, Some(Want { id, level, index }), None),
        };
        let fetched = self.partition_read(p, want)?;
        let mut payload = match payload.take().or(fetched) {
            Some(v) => v,
            None => return Err(OramError::Invariant(format!("block {id} was not returned by its partition"))),
        };
        let old_payload = payload.clone();
        f(&mut payload);
        if payload.len() != self.payload_len() {
            return Err(OramError::Domain("update changed the payload length".into()));
        }
        self.slots[r as usize].push_back((id, payload));
        self.metrics.cache_blocks += 1;
        self.metrics.cache_hw = self.metrics.cache_hw.max(self.metrics.cache_blocks);

        if self.cfg.piggyback {
            self.evict(p)?;
        }
        for s in self.evictor.draw(&mut self.evict_rng) {
            self.evict(s)?;
        }
        self.metrics.accesses += 1;
        Ok(old_payload)
    }

    /// A block whose position says it is held on behalf of partition `s`.
    fn take_cached(&mut self, s: u32, id: u64) -> Result<Vec<u8>> {
        let slot = &mut self.slots[s as usize];
        if let Some(pos) = slot.iter().position(|(b, _)| *b == id) {
            self.metrics.cache_blocks -= 1;
            return Ok(slot.remove(pos).unwrap().1);
        }
        self.amortizer
            .as_mut()
            .and_then(|a| a.take_pending(s, id))
            .ok_or_else(|| OramError::Invariant(format!("block {id} missing from cache slot {s}")))
    }

    fn shuffle_work(&self) -> u64 {
        self.engine.counters.shuffle_reads + self.engine.counters.shuffle_writes
    }

    fn note_work(&mut self, before: u64) {
        if self.amortizer.is_none() {
            let work = self.shuffle_work() - before;
            self.metrics.max_access_work = self.metrics.max_access_work.max(work);
            if let Some(log) = &mut self.step_log {
                log.push(work);
            }
        }
    }

    /// One partition read, fetching `want` if given and a dummy otherwise.
    fn partition_read(&mut self, p: u32, want: Option<Want>) -> Result<Option<Vec<u8>>> {
        if let Some(t) = &mut self.trace {
            t.push(p);
        }
        self.metrics.partition_reads += 1;
        let before = self.shuffle_work();
        let mut want = want;
        let mut got = None;
        if let Some(w) = want {
            if self.engine.parts[p as usize].levels[w.level as usize].status == LevelStatus::Constructing {
                let job = self.amortizer.as_mut().and_then(|a| a.current_for(p)).ok_or_else(|| {
                    OramError::Invariant(format!("level {} of partition {p} is under construction without a job", w.level))
                })?;
                got = Some(self.engine.take_from_construction(p, w, job)?);
                want = None;
            }
        }
        if let Some(v) = self.relieve(p, want)? {
            got = Some(v);
            want = None;
        }
        let job = self.amortizer.as_mut().and_then(|a| a.current_for(p));
        let read = self.engine.read(p, want, job, &mut self.engine_rng)?;
        if let Some(a) = &mut self.amortizer {
            a.run_step(&mut self.engine, &mut self.placement)?;
        }
        self.note_work(before);
        Ok(got.or(read))
    }

    /// Reshuffles levels of `p` that could not serve another read. Returns
    /// the payload of `want` if a reshuffle had to move it.
    fn relieve(&mut self, p: u32, want: Option<Want>) -> Result<Option<Vec<u8>>> {
        let mut extracted: Option<Vec<u8>> = None;
        loop {
            let keep = if extracted.is_some() { None } else { want };
            let (shuffling, covered, has_job) = match &mut self.amortizer {
                Some(a) => (
                    a.current_for(p).map(|j| j.shuffling_levels()).unwrap_or_default(),
                    a.queued_target(p),
                    a.has_job(p),
                ),
                None => (Vec::new(), None, false),
            };
            let Some(level) = self.engine.exhausted_level(p, &shuffling, covered) else {
                break;
            };
            self.metrics.forced_reshuffles += 1;
            self.engine.counters.forced_reshuffles += 1;
            if has_job {
                let a = self.amortizer.as_mut().unwrap();
                let out = a.force_partition(p, keep, &mut self.engine, &mut self.placement)?;
                extracted = extracted.or(out);
                continue;
            }
            let step = self.amortizer.as_ref().map_or(self.metrics.accesses, |a| a.step());
            let mut job = Job::new(p, level, Vec::new(), step);
            job.keep = keep;
            self.engine.run_to_completion(&mut job, &mut self.placement)?;
            extracted = extracted.or(job.extracted.take());
        }
        Ok(extracted)
    }

    /// Writes one block from cache slot `p` back to partition `p`, or a
    /// dummy when the slot is empty.
    pub fn evict(&mut self, p: u32) -> Result<()> {
        if p >= self.geom.partitions {
            return Err(OramError::Domain(format!("partition {p} out of range")));
        }
        let item = self.slots[p as usize].pop_front();
        match item {
            Some(_) => self.metrics.cache_blocks -= 1,
            None => self.metrics.dummy_writes += 1,
        }
        self.metrics.partition_writes += 1;
        let before = self.shuffle_work();
        match &mut self.amortizer {
            Some(a) => {
                a.enqueue_write(p, item);
                a.run_step(&mut self.engine, &mut self.placement)?;
            }
            None => {
                let mut job = Job::new(p, 0, item.into_iter().collect(), self.metrics.accesses);
                self.engine.run_to_completion(&mut job, &mut self.placement)?;
            }
        }
        self.note_work(before);
        Ok(())
    }

    pub fn metrics(&self) -> &OramMetrics {
        &self.metrics
    }

    pub fn engine_counters(&self) -> &EngineCounters {
        &self.engine.counters
    }

    pub fn amortizer_stats(&self) -> Option<&AmortizerStats> {
        self.amortizer.as_ref().map(|a| &a.stats)
    }

    /// Shuffle budget per time step, in concurrent mode.
    pub fn step_budget(&self) -> Option<u64> {
        self.amortizer.as_ref().map(|a| a.budget())
    }

    /// Server statistics, with the per-step work log when recording is on.
    pub fn stats(&mut self) -> Result<TransferStats> {
        let mut stats = self.engine.store.stats()?;
        stats.per_step_work = match (&self.amortizer, &self.step_log) {
            (Some(a), _) => a.step_log().map(<[u64]>::to_vec).unwrap_or_default(),
            (None, Some(log)) => log.clone(),
            (None, None) => Vec::new(),
        };
        Ok(stats)
    }

    /// Block transfers of this ORAM and every position-map ORAM below it.
    pub fn total_blocks_transferred(&mut self) -> Result<u64> {
        let own = self.engine.store.stats()?.blocks_total();
        Ok(own + match &mut self.placement {
            Placement::Split(s) => s.dir.total_blocks_transferred()?,
            Placement::Map(_) => 0,
        })
    }

    /// Records the partition of every partition read from now on.
    pub fn enable_trace(&mut self) {
        self.trace.get_or_insert_with(Vec::new);
    }

    pub fn take_trace(&mut self) -> Vec<u32> {
        self.trace.as_mut().map(std::mem::take).unwrap_or_default()
    }

    /// Records shuffle work per time step (access in non-concurrent mode).
    pub fn record_steps(&mut self) {
        match &mut self.amortizer {
            Some(a) => a.record_steps(),
            None => {
                self.step_log.get_or_insert_with(Vec::new);
            }
        }
    }

    /// Test hook: the access with this sequence number leaves the position map untouched.
    pub fn inject_skipped_position_update(&mut self, access: u64) {
        self.fault_at = Some(access);
    }

    /// Current position of `id`, for the plain and compressed maps.
    pub fn position(&self, id: u64) -> Result<Position> {
        match &self.placement {
            Placement::Map(m) => m.get(id),
            Placement::Split(_) => Err(OramError::Config("positions of a recursive ORAM are not locally known".into())),
        }
    }

    pub fn position_map(&self) -> Option<&PositionMap> {
        match &self.placement {
            Placement::Map(m) => Some(m),
            Placement::Split(_) => None,
        }
    }

    pub fn cache_occupancy(&self) -> Vec<usize> {
        self.slots.iter().map(|s| s.len()).collect()
    }

    pub fn initial_fill(&self) -> &[u64] {
        &self.initial_fill
    }

    /// Bit `ℓ` set when level `ℓ` of `p` is filled.
    pub fn fill_pattern(&self, p: u32) -> u64 {
        self.engine.parts[p as usize].fill_pattern()
    }

    /// Real blocks stored on the server in partition `p`.
    pub fn partition_load(&self, p: u32) -> u32 {
        self.engine.parts[p as usize].live()
    }

    pub fn evictor(&self) -> &Evictor {
        &self.evictor
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Recursion depth: number of position-map ORAMs below this one.
    pub fn depth(&self) -> usize {
        match &self.placement {
            Placement::Map(_) => 0,
            Placement::Split(s) => 1 + s.dir.depth(),
        }
    }

    pub fn storage_report(&mut self) -> Result<StorageReport> {
        recursion::report(self)
    }

    pub(crate) fn split(&self) -> Option<&SplitMap> {
        match &self.placement {
            Placement::Split(s) => Some(s),
            Placement::Map(_) => None,
        }
    }

    pub(crate) fn split_mut(&mut self) -> Option<&mut SplitMap> {
        match &mut self.placement {
            Placement::Split(s) => Some(s),
            Placement::Map(_) => None,
        }
    }
}
