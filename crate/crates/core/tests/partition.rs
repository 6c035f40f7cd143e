//! Partition-level invariants observed from the server's side of the contract.

mod common;

use std::collections::{HashMap, HashSet};

use common::Shared;
use partoram::blockstore::{BlockRequest, LevelRef, LevelUpload, StoreLayout, StoreResult, UploadChunk};
use partoram::crypto::{CipherBlock, NONCE_LEN};
use partoram::posmap::BlockId;
use partoram::sim::{payload_for, Workload, WorkloadKind};
use partoram::{BlockStore, CipherSuite, EvictAlgo, MemStore, Op, Oram, OramConfig, PayloadMode, Position, TransferStats};

#[derive(Default)]
struct Recorder {
    inner: MemStore,
    fetched: HashSet<(u32, u8, u64, u32)>,
    reread: Vec<BlockRequest>,
    pending: HashMap<(u32, u8, u64), Vec<BlockId>>,
    /// Completed uploads in order: level and the id in each slot.
    uploads: Vec<(LevelRef, u32, Vec<BlockId>)>,
}

fn id_of(cb: &CipherBlock) -> BlockId {
    BlockId::decode(u64::from_le_bytes(cb.0[NONCE_LEN..NONCE_LEN + 8].try_into().unwrap()))
}

impl BlockStore for Recorder {
    fn setup(&mut self, layout: &StoreLayout) -> StoreResult<()> {
        self.inner.setup(layout)
    }

    fn fetch_blocks(&mut self, requests: &[BlockRequest]) -> StoreResult<Vec<CipherBlock>> {
        for r in requests {
            if !self.fetched.insert((r.level.partition, r.level.level, r.level.epoch, r.offset)) {
                self.reread.push(*r);
            }
        }
        self.inner.fetch_blocks(requests)
    }

    fn store_level(&mut self, upload: LevelUpload) -> StoreResult<()> {
        let l = upload.level;
        let ids = self.pending.entry((l.partition, l.level, l.epoch)).or_default();
        if let UploadChunk::Plain(blocks) = &upload.chunk {
            ids.extend(blocks.iter().map(id_of));
        }
        if upload.offset + upload.chunk.units() == upload.total {
            let ids = self.pending.remove(&(l.partition, l.level, l.epoch)).unwrap();
            self.uploads.push((l, upload.total, ids));
        }
        self.inner.store_level(upload)
    }

    fn fetch_meta(&mut self, level: LevelRef) -> StoreResult<Vec<u8>> {
        self.inner.fetch_meta(level)
    }

    fn mark_unfilled(&mut self, level: LevelRef) -> StoreResult<()> {
        self.inner.mark_unfilled(level)
    }

    fn stats(&mut self) -> StoreResult<TransferStats> {
        self.inner.stats()
    }
}

fn visible(n: u64) -> partoram::config::OramConfigBuilder {
    OramConfig::builder(n).block_size(16).cipher(CipherSuite::Sim).seed(17)
}

fn drive(oram: &mut Oram, ops: u64, mut after: impl FnMut(&mut Oram, u64)) {
    let w = Workload::new(WorkloadKind::Uniform, ops).seed(8);
    for (i, req) in w.requests(oram.config().n).unwrap().enumerate() {
        let op = if req.write { Op::Write(payload_for(i as u64, 16)) } else { Op::Read };
        oram.access(op, req.id).unwrap();
        after(oram, req.id);
    }
}

#[test]
fn no_level_slot_is_read_twice_in_one_epoch() {
    for concurrent in [false, true] {
        let store = Shared::new(Recorder::default());
        let cfg = visible(1 << 10).concurrent(concurrent).build().unwrap();
        let mut oram = Oram::new(cfg, Box::new(store.clone())).unwrap();
        drive(&mut oram, 6000, |_, _| {});
        let rec = store.0.lock().unwrap();
        assert!(rec.reread.is_empty(), "concurrent={concurrent}: re-read {:?}", rec.reread.first());
        assert!(rec.fetched.len() > 10_000);
    }
}

#[test]
fn uploads_have_level_size_and_at_least_half_dummies() {
    let store = Shared::new(Recorder::default());
    let mut oram = Oram::new(visible(1 << 10).build().unwrap(), Box::new(store.clone())).unwrap();
    drive(&mut oram, 6000, |_, _| {});
    let geom = oram.geometry().clone();
    let rec = store.0.lock().unwrap();
    assert!(rec.uploads.len() > 1000);
    let mut epochs: HashMap<(u32, u8), u64> = HashMap::new();
    for (l, total, ids) in &rec.uploads {
        assert_eq!(*total, geom.size(l.level));
        assert_eq!(ids.len() as u32, *total);
        let reals = ids.iter().filter(|id| id.real().is_some()).count() as u32;
        assert!(reals <= geom.half(l.level), "{reals} reals in level {} of size {total}", l.level);
        if let Some(prev) = epochs.insert((l.partition, l.level), l.epoch) {
            assert!(l.epoch > prev, "epoch of {:?} did not grow", l);
        }
    }
}

#[test]
fn compressed_uploads_carry_half_the_rows() {
    let store = Shared::new(Recorder::default());
    let cfg = visible(1 << 8).compression(true).build().unwrap();
    let mut oram = Oram::new(cfg, Box::new(store.clone())).unwrap();
    drive(&mut oram, 2000, |_, _| {});
    let geom = oram.geometry().clone();
    let rec = store.0.lock().unwrap();
    assert!(!rec.uploads.is_empty());
    for (l, total, _) in &rec.uploads {
        assert_eq!(*total, geom.half(l.level));
    }
}

/// Without forced reshuffles the filled levels below the top count partition writes in binary.
#[test]
fn fill_patterns_count_writes_in_binary() {
    let store = Shared::new(Recorder::default());
    let mut oram = Oram::new(visible(1 << 10).build().unwrap(), Box::new(store.clone())).unwrap();
    let parts = oram.geometry().partitions;
    let top = oram.geometry().top();
    let low = (1u64 << top) - 1;
    let mut before: Vec<u64> = (0..parts).map(|p| oram.fill_pattern(p)).collect();
    for &f in &before {
        assert!(f >> top & 1 == 1, "top level starts filled");
    }
    let mut seen = 0;
    drive(&mut oram, 4000, |oram, _| {
        assert_eq!(oram.metrics().forced_reshuffles, 0);
        let rec = store.0.lock().unwrap();
        let mut writes = vec![0u64; parts as usize];
        for (l, _, _) in &rec.uploads[seen..] {
            writes[l.partition as usize] += 1;
        }
        seen = rec.uploads.len();
        for p in 0..parts {
            let now = oram.fill_pattern(p);
            let want = (before[p as usize] + writes[p as usize]) & low;
            assert_eq!(now & low, want, "partition {p}");
            assert!(now >> top & 1 == 1);
            before[p as usize] = now;
        }
    });
}

/// A block the map places at (p, ℓ) was uploaded to the newest epoch of that level.
#[test]
fn position_map_agrees_with_level_contents() {
    let store = Shared::new(Recorder::default());
    let mut oram = Oram::new(visible(1 << 9).build().unwrap(), Box::new(store.clone())).unwrap();
    drive(&mut oram, 3000, |_, _| {});
    let rec = store.0.lock().unwrap();
    let mut newest: HashMap<(u32, u8), &Vec<BlockId>> = HashMap::new();
    for (l, _, ids) in &rec.uploads {
        newest.insert((l.partition, l.level), ids);
    }
    let mut on_server = 0;
    for id in 0..oram.config().n {
        if let Position::Server { p, level, .. } = oram.position(id).unwrap() {
            let ids = newest.get(&(p, level)).expect("level was uploaded");
            assert!(ids.contains(&BlockId::Real(id)), "block {id} missing from ({p}, {level})");
            on_server += 1;
        }
    }
    assert!(on_server > 100);
}

#[test]
fn initial_fill_is_uniform_over_lower_levels() {
    let mut counts = Vec::new();
    let mut samples = 0;
    for seed in 0..40 {
        let cfg = OramConfig::builder(1 << 16)
            .block_size(64)
            .payload_mode(PayloadMode::MetadataOnly)
            .seed(seed)
            .build()
            .unwrap();
        let oram = Oram::in_memory(cfg).unwrap();
        let top = oram.geometry().top();
        counts.resize(top as usize, 0u64);
        for &fill in oram.initial_fill() {
            assert!(fill >> top & 1 == 1);
            for (l, c) in counts.iter_mut().enumerate() {
                *c += fill >> l & 1;
            }
            samples += 1;
        }
    }
    assert!(samples >= 10_000);
    for (l, c) in counts.iter().enumerate() {
        let freq = *c as f64 / samples as f64;
        assert!((freq - 0.5).abs() < 0.02, "level {l} filled in {freq} of partitions");
    }
}

#[test]
fn random_eviction_without_piggyback_forces_reshuffles_and_stays_correct() {
    let cfg = visible(1 << 8).evict_algo(EvictAlgo::Random).nu(1.0).piggyback(false).build().unwrap();
    let mut oram = Oram::in_memory(cfg).unwrap();
    let mut reference: HashMap<u64, Vec<u8>> = HashMap::new();
    for i in 0..4000u64 {
        let id = (i * 37) % 256;
        if i % 3 == 0 {
            let data = payload_for(i, 16);
            oram.write(id, data.clone()).unwrap();
            reference.insert(id, data);
        } else {
            let want = reference.get(&id).cloned().unwrap_or_else(|| vec![0; 16]);
            assert_eq!(oram.read(id).unwrap(), want);
        }
    }
    assert!(oram.metrics().forced_reshuffles > 0);
}
