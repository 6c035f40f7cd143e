use std::collections::BTreeMap;

use super::codec::{compress_upload, pack};
use super::{Engine, LevelCrypto, LevelStatus, Locations, Want, META_INDEX};
use crate::blockstore::{BlockRequest, LevelRef, LevelUpload, UploadChunk};
use crate::config::PayloadMode;
use crate::crypto::CipherBlock;
use crate::posmap::{Block, BlockId};
use crate::{OramError, Result};

/// A reshuffle of partition `p` into level `target` (escalated to the first
/// unfilled level at or above it), carrying pending blocks `beta`.
pub struct Job {
    pub partition: u32,
    pub target: u8,
    pub beta: Vec<(u64, Vec<u8>)>,
    /// Time step at which the job was first queued.
    pub enqueued: u64,
    /// Work units spent so far.
    pub work: u64,
    pub(crate) keep: Option<Want>,
    pub(crate) extracted: Option<Vec<u8>>,
    pub(crate) phase: Phase,
}

pub(crate) enum Phase {
    Pending,
    Reading(ReadPhase),
    Writing(WritePhase),
    Done,
}

pub(crate) struct ReadPhase {
    target: u8,
    sources: Vec<Source>,
    fetched: BTreeMap<u64, Fetched>,
}

pub(crate) struct Source {
    pub level: u8,
    epoch: u64,
    /// Buffer indices chosen for the reshuffle and not yet fetched, in offset order.
    pub remaining: Vec<u32>,
}

struct Fetched {
    level: u8,
    index: u32,
    payload: Vec<u8>,
}

pub(crate) struct WritePhase {
    target: u8,
    epoch: u64,
    /// Real blocks by buffer index, kept for reads during the upload.
    plain: Vec<Option<(u64, Vec<u8>)>>,
    plan: Plan,
    total: u32,
    cursor: u32,
    meta: Option<Vec<u8>>,
}

enum Plan {
    Blocks(std::vec::IntoIter<CipherBlock>),
    /// Full level sent, charged as half.
    Nominal(std::vec::IntoIter<CipherBlock>),
    Rows(std::vec::IntoIter<Vec<u64>>),
}

impl Job {
    pub fn new(partition: u32, target: u8, beta: Vec<(u64, Vec<u8>)>, enqueued: u64) -> Job {
        Job { partition, target, beta, enqueued, work: 0, keep: None, extracted: None, phase: Phase::Pending }
    }

    pub fn is_done(&self) -> bool {
        matches!(self.phase, Phase::Done)
    }

    pub fn is_pending(&self) -> bool {
        matches!(self.phase, Phase::Pending)
    }

    /// Still accepting reads of `beta` from client memory.
    pub fn beta_visible(&self) -> bool {
        matches!(self.phase, Phase::Pending | Phase::Reading(_))
    }

    pub fn take_beta(&mut self, id: u64) -> Option<Vec<u8>> {
        if !self.beta_visible() {
            return None;
        }
        let pos = self.beta.iter().position(|(b, _)| *b == id)?;
        Some(self.beta.remove(pos).1)
    }

    /// Levels currently being read by this job.
    pub fn shuffling_levels(&self) -> Vec<u8> {
        match &self.phase {
            Phase::Reading(r) => r.sources.iter().map(|s| s.level).collect(),
            _ => Vec::new(),
        }
    }

    /// Level being uploaded, if any.
    pub fn constructing_level(&self) -> Option<u8> {
        match &self.phase {
            Phase::Writing(w) => Some(w.target),
            _ => None,
        }
    }

    /// Blocks held in client memory by this job.
    pub fn buffered(&self) -> usize {
        self.beta.len()
            + match &self.phase {
                Phase::Reading(r) => r.fetched.len(),
                Phase::Writing(w) => w.plain.iter().filter(|x| x.is_some()).count(),
                _ => 0,
            }
    }

    pub(crate) fn source_mut(&mut self, level: u8) -> Option<&mut Source> {
        match &mut self.phase {
            Phase::Reading(r) => r.sources.iter_mut().find(|s| s.level == level),
            _ => None,
        }
    }

    pub(crate) fn take_fetched(&mut self, w: Want) -> Result<Vec<u8>> {
        if let Phase::Reading(r) = &mut self.phase {
            if let Some(f) = r.fetched.get(&w.id) {
                if f.level == w.level && f.index == w.index {
                    return Ok(r.fetched.remove(&w.id).unwrap().payload);
                }
            }
        }
        Err(OramError::Invariant(format!("block {} neither pending nor buffered by its reshuffle", w.id)))
    }

    pub(crate) fn stash(&mut self, id: u64, level: u8, index: u32, payload: Vec<u8>) {
        if let Phase::Reading(r) = &mut self.phase {
            r.fetched.insert(id, Fetched { level, index, payload });
        }
    }

    pub(crate) fn take_constructed(&mut self, w: Want) -> Result<Vec<u8>> {
        if let Phase::Writing(wp) = &mut self.phase {
            if wp.target == w.level {
                if let Some(Some((id, _))) = wp.plain.get(w.index as usize) {
                    if *id == w.id {
                        return Ok(wp.plain[w.index as usize].take().unwrap().1);
                    }
                }
            }
        }
        Err(OramError::Invariant(format!("block {} not in the level under construction", w.id)))
    }
}

impl Engine {
    /// Decides the final target and the blocks to read from each source level.
    fn begin(&mut self, job: &mut Job, locs: &dyn Locations) -> Result<()> {
        let p = job.partition;
        let top = self.geom.top();
        let nlevels = self.geom.levels as usize;
        let mut unread_reals: Vec<Option<Vec<u32>>> = vec![None; nlevels];
        let mut t = job.target.min(top);
        let sources = loop {
            while t < top && self.parts[p as usize].levels[t as usize].is_filled() {
                t += 1;
            }
            let sources: Vec<u8> = (0..=t).filter(|&l| self.parts[p as usize].levels[l as usize].is_filled()).collect();
            let mut reals = job.beta.len() as u32;
            for &l in &sources {
                if unread_reals[l as usize].is_none() {
                    unread_reals[l as usize] = Some(self.unread_reals(p, l, job.keep, locs)?);
                }
                reals += unread_reals[l as usize].as_ref().unwrap().len() as u32;
            }
            if reals <= self.geom.half(t) {
                break sources;
            }
            if t == top {
                return Err(OramError::Capacity { partition: p, reals, capacity: self.geom.capacity });
            }
            t += 1;
        };

        let mut planned = Vec::with_capacity(sources.len());
        for l in sources {
            let reals = unread_reals[l as usize].take().unwrap();
            let lvl = &self.parts[p as usize].levels[l as usize];
            let quota = self.geom.half(l).min(lvl.unread());
            let dummies = quota.saturating_sub(reals.len() as u32);
            if lvl.size() - lvl.next_dummy < dummies {
                return Err(OramError::Invariant(format!("level {l} of partition {p} lacks unread dummies")));
            }
            let mut chosen: Vec<(u32, u32)> = reals
                .into_iter()
                .chain(lvl.next_dummy..lvl.next_dummy + dummies)
                .map(|i| (lvl.offset(i), i))
                .collect();
            chosen.sort_unstable();
            planned.push(Source { level: l, epoch: lvl.epoch, remaining: chosen.into_iter().map(|(_, i)| i).collect() });
        }
        job.target = t;
        job.phase = Phase::Reading(ReadPhase { target: t, sources: planned, fetched: BTreeMap::new() });
        Ok(())
    }

    /// Buffer indices of real blocks in a level that have not been read.
    fn unread_reals(&mut self, p: u32, l: u8, keep: Option<Want>, locs: &dyn Locations) -> Result<Vec<u32>> {
        let lvl = &self.parts[p as usize].levels[l as usize];
        if lvl.virtual_ || lvl.real_count == 0 {
            return Ok(Vec::new());
        }
        if self.concurrent() {
            return Ok((0..lvl.real_count).filter(|&i| !lvl.fetched[i as usize]).collect());
        }
        let size = lvl.size();
        let level_ref = LevelRef { partition: p, level: l, epoch: lvl.epoch };
        let sealed = self.store.fetch_meta(level_ref)?;
        self.counters.meta_fetches += 1;
        let lvl = &self.parts[p as usize].levels[l as usize];
        let crypto = lvl.crypto.as_ref().ok_or_else(|| OramError::Invariant("filled level without key".into()))?;
        let ids = Engine::decode_meta(&crypto.cipher.open_bytes(META_INDEX, &sealed)?, size)?;
        let mut out = Vec::new();
        for (i, id) in ids.iter().enumerate().take(lvl.real_count as usize) {
            let BlockId::Real(id) = *id else {
                return Err(OramError::Integrity(format!("metadata lists a dummy in real slot {i}")));
            };
            let i = i as u32;
            let kept = keep.is_some_and(|w| w.id == id && w.level == l && w.index == i);
            if kept || locs.is_current(id, p, l, i) {
                if lvl.fetched[i as usize] {
                    return Err(OramError::Invariant(format!("current block {id} was already read")));
                }
                out.push(i);
            }
        }
        Ok(out)
    }

    /// Spends up to `budget` work units on `job`; returns the units spent.
    pub(crate) fn advance(&mut self, job: &mut Job, budget: u64, locs: &mut dyn Locations) -> Result<u64> {
        let mut spent = 0u64;
        loop {
            match &job.phase {
                Phase::Done => break,
                Phase::Pending => self.begin(job, locs)?,
                Phase::Reading(rp) => {
                    if rp.sources.iter().all(|s| s.remaining.is_empty()) {
                        self.finish_reading(job, locs)?;
                    } else if spent == budget {
                        break;
                    } else {
                        let n = self.read_chunk(job, budget - spent)?;
                        spent += n;
                    }
                }
                Phase::Writing(_) => {
                    if spent == budget {
                        break;
                    }
                    spent += self.upload_chunk(job, budget - spent)?;
                }
            }
        }
        job.work += spent;
        Ok(spent)
    }

    /// Fetches up to `limit` of the job's remaining source blocks in one batch.
    fn read_chunk(&mut self, job: &mut Job, limit: u64) -> Result<u64> {
        let p = job.partition;
        let Phase::Reading(rp) = &mut job.phase else { unreachable!() };
        let mut reqs = Vec::new();
        let mut picked = Vec::new();
        for src in rp.sources.iter_mut() {
            let room = limit.saturating_sub(reqs.len() as u64);
            let take = room.min(src.remaining.len() as u64) as usize;
            let lvl = &mut self.parts[p as usize].levels[src.level as usize];
            for i in src.remaining.drain(..take) {
                lvl.mark_fetched(i)?;
                reqs.push(BlockRequest {
                    level: LevelRef { partition: p, level: src.level, epoch: src.epoch },
                    offset: lvl.offset(i),
                });
                picked.push((src.level, i));
            }
        }
        let blocks = self.store.fetch_blocks(&reqs)?;
        if blocks.len() != reqs.len() {
            return Err(OramError::Integrity("short reply to a reshuffle read".into()));
        }
        for ((l, i), (req, cb)) in picked.into_iter().zip(reqs.iter().zip(&blocks)) {
            if let Some((BlockId::Real(id), payload)) = self.open(p, l, i, req.offset, cb)? {
                job.stash(id, l, i, payload);
            }
        }
        let n = reqs.len() as u64;
        self.counters.shuffle_reads += n;
        Ok(n)
    }

    pub(crate) fn run_to_completion(&mut self, job: &mut Job, locs: &mut dyn Locations) -> Result<u64> {
        let spent = self.advance(job, u64::MAX, locs)?;
        debug_assert!(job.is_done());
        Ok(spent)
    }

    fn finish_reading(&mut self, job: &mut Job, locs: &mut dyn Locations) -> Result<()> {
        let p = job.partition;
        let Phase::Reading(rp) = std::mem::replace(&mut job.phase, Phase::Done) else { unreachable!() };
        for src in &rp.sources {
            self.store.mark_unfilled(LevelRef { partition: p, level: src.level, epoch: src.epoch })?;
            self.parts[p as usize].levels[src.level as usize].reset();
        }
        let mut fetched = rp.fetched;
        if let Some(w) = job.keep.take() {
            if fetched.get(&w.id).is_some_and(|f| f.level == w.level && f.index == w.index) {
                job.extracted = Some(fetched.remove(&w.id).unwrap().payload);
            }
        }
        let mut reals = Vec::with_capacity(fetched.len() + job.beta.len());
        for (id, f) in fetched {
            if !locs.is_current(id, p, f.level, f.index) {
                return Err(OramError::Invariant(format!("reshuffle fetched stale block {id}")));
            }
            reals.push((id, f.payload));
        }
        reals.append(&mut job.beta);
        self.build_level(job, rp.target, reals, locs)
    }

    fn build_level(&mut self, job: &mut Job, t: u8, reals: Vec<(u64, Vec<u8>)>, locs: &mut dyn Locations) -> Result<()> {
        let p = job.partition;
        let size = self.geom.size(t);
        let half = self.geom.half(t);
        let k = reals.len() as u32;
        if k > half {
            return Err(OramError::Capacity { partition: p, reals: k, capacity: half });
        }
        let LevelCrypto { prp, cipher } = self.fresh_level_crypto(size)?;
        let epoch = self.parts[p as usize].levels[t as usize].epoch + 1;
        let offsets: Vec<u32> = (0..size).map(|i| prp.apply(i as u64).unwrap() as u32).collect();

        let dummy = Block::dummy(self.payload_len());
        let mut image: Vec<Option<CipherBlock>> = vec![None; size as usize];
        let mut scratch = Block { id: BlockId::Dummy, payload: Vec::new() };
        for (i, &off) in offsets.iter().enumerate() {
            let block = match reals.get(i) {
                Some((id, payload)) => {
                    scratch.id = BlockId::Real(*id);
                    scratch.payload.clone_from(payload);
                    &scratch
                }
                None => &dummy,
            };
            image[off as usize] = Some(cipher.seal(&mut self.key_rng, off as u64, block));
        }
        let image: Vec<CipherBlock> = image.into_iter().map(|b| b.unwrap()).collect();
        let meta_plain = Engine::encode_meta(
            reals.iter().map(|(id, _)| BlockId::Real(*id)).chain((k..size).map(|_| BlockId::Dummy)),
        );
        let meta = cipher.seal_bytes(&mut self.key_rng, META_INDEX, &meta_plain);

        for (i, (id, _)) in reals.iter().enumerate() {
            locs.relocate(*id, p, t, i as u32)?;
        }
        let (plan, total) = match (self.compression, self.payload_mode) {
            (false, _) => (Plan::Blocks(image.into_iter()), size),
            (true, PayloadMode::MetadataOnly) => (Plan::Nominal(image.into_iter()), size),
            (true, PayloadMode::Full) => {
                let packed: Vec<Vec<u64>> = image.iter().map(|b| pack(b.as_bytes())).collect();
                let positions: Vec<usize> = offsets[..half as usize].iter().map(|&o| o as usize).collect();
                (Plan::Rows(compress_upload(&packed, &positions)?.into_iter()), half)
            }
        };

        let concurrent = self.concurrent();
        let lvl = &mut self.parts[p as usize].levels[t as usize];
        lvl.reset();
        lvl.status = LevelStatus::Constructing;
        lvl.epoch = epoch;
        lvl.crypto = Some(LevelCrypto { prp, cipher });
        lvl.real_count = k;
        lvl.next_dummy = k;
        lvl.constrained = if self.compression { half } else { size };
        lvl.ids = concurrent.then(|| reals.iter().map(|(id, _)| *id).collect());
        lvl.live = k;
        self.counters.shuffle_buffer_hw = self.counters.shuffle_buffer_hw.max(k);
        self.note_load(p)?;

        job.phase = Phase::Writing(WritePhase {
            target: t,
            epoch,
            plain: reals.into_iter().map(Some).collect(),
            plan,
            total,
            cursor: 0,
            meta: Some(meta),
        });
        Ok(())
    }

    /// Uploads the next chunk of at most `budget` work units.
    fn upload_chunk(&mut self, job: &mut Job, budget: u64) -> Result<u64> {
        let p = job.partition;
        let Phase::Writing(wp) = &mut job.phase else { unreachable!() };
        let remaining = (wp.total - wp.cursor) as u64;
        let (chunk, units, work) = match &mut wp.plan {
            Plan::Blocks(it) => {
                let n = budget.min(remaining) as usize;
                (UploadChunk::Plain(it.by_ref().take(n).collect()), n as u32, n as u64)
            }
            Plan::Rows(it) => {
                let n = budget.min(remaining) as usize;
                (UploadChunk::Vandermonde(it.by_ref().take(n).collect()), n as u32, n as u64)
            }
            Plan::Nominal(it) => {
                let pairs = budget.min(remaining / 2);
                let blocks: Vec<CipherBlock> = it.by_ref().take(2 * pairs as usize).collect();
                (UploadChunk::Nominal { blocks, accounted: pairs as u32 }, 2 * pairs as u32, pairs)
            }
        };
        let last = wp.cursor + units == wp.total;
        let upload = LevelUpload {
            level: LevelRef { partition: p, level: wp.target, epoch: wp.epoch },
            offset: wp.cursor,
            total: wp.total,
            chunk,
            meta: if last { wp.meta.take() } else { None },
        };
        self.store.store_level(upload)?;
        wp.cursor += units;
        self.counters.shuffle_writes += work;
        if last {
            let t = wp.target;
            self.parts[p as usize].levels[t as usize].status = LevelStatus::Filled;
            self.counters.jobs += 1;
            job.phase = Phase::Done;
        }
        Ok(work)
    }
}
