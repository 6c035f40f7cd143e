#![allow(dead_code)]

use std::collections::{HashMap, HashSet};
use std::sync::{Arc, Mutex};

use partoram::blockstore::{BlockRequest, LevelRef, LevelUpload, StoreLayout, StoreResult, UploadChunk};
use partoram::crypto::CipherBlock;
use partoram::{BlockStore, MemStore, TransferStats};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

/// Store handle that stays usable after a clone is moved into an ORAM.
pub struct Shared<S>(pub Arc<Mutex<S>>);

impl<S> Shared<S> {
    pub fn new(inner: S) -> Self {
        Shared(Arc::new(Mutex::new(inner)))
    }
}

impl<S> Clone for Shared<S> {
    fn clone(&self) -> Self {
        Shared(Arc::clone(&self.0))
    }
}

impl<S: BlockStore> BlockStore for Shared<S> {
    fn setup(&mut self, layout: &StoreLayout) -> StoreResult<()> {
        self.0.lock().unwrap().setup(layout)
    }
    fn fetch_blocks(&mut self, requests: &[BlockRequest]) -> StoreResult<Vec<CipherBlock>> {
        self.0.lock().unwrap().fetch_blocks(requests)
    }
    fn store_level(&mut self, upload: LevelUpload) -> StoreResult<()> {
        self.0.lock().unwrap().store_level(upload)
    }
    fn fetch_meta(&mut self, level: LevelRef) -> StoreResult<Vec<u8>> {
        self.0.lock().unwrap().fetch_meta(level)
    }
    fn mark_unfilled(&mut self, level: LevelRef) -> StoreResult<()> {
        self.0.lock().unwrap().mark_unfilled(level)
    }
    fn stats(&mut self) -> StoreResult<TransferStats> {
        self.0.lock().unwrap().stats()
    }
}

/// Blocks an epoch of one level held, by slot.
type Epoch = (u64, HashMap<u32, CipherBlock>);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Flip one bit of one block served from an uploaded level.
    BitFlip,
    /// Serve the block an older epoch of the same level held at that offset.
    StaleEpoch,
}

/// A malicious server: honest until `arm_after` fetches have passed, then
/// corrupts the first fetch that offers a target for `fault`.
pub struct FaultyStore {
    inner: MemStore,
    fault: Fault,
    arm_after: u64,
    fetches: u64,
    rng: ChaCha20Rng,
    uploaded: HashSet<(u32, u8, u64)>,
    history: HashMap<(u32, u8), Vec<Epoch>>,
    pub fired: bool,
}

impl FaultyStore {
    pub fn new(fault: Fault, arm_after: u64, seed: u64) -> Self {
        FaultyStore {
            inner: MemStore::new(),
            fault,
            arm_after,
            fetches: 0,
            rng: ChaCha20Rng::seed_from_u64(seed),
            uploaded: HashSet::new(),
            history: HashMap::new(),
            fired: false,
        }
    }

    fn stale_copy(&self, req: &BlockRequest) -> Option<CipherBlock> {
        let epochs = self.history.get(&(req.level.partition, req.level.level))?;
        epochs
            .iter()
            .rev()
            .filter(|(e, _)| *e < req.level.epoch)
            .find_map(|(_, blocks)| blocks.get(&req.offset).cloned())
    }
}

impl BlockStore for FaultyStore {
    fn setup(&mut self, layout: &StoreLayout) -> StoreResult<()> {
        self.inner.setup(layout)
    }

    fn fetch_blocks(&mut self, requests: &[BlockRequest]) -> StoreResult<Vec<CipherBlock>> {
        let mut blocks = self.inner.fetch_blocks(requests)?;
        self.fetches += 1;
        if self.fired || self.fetches <= self.arm_after {
            return Ok(blocks);
        }
        let live: Vec<usize> = (0..requests.len())
            .filter(|&i| {
                let l = requests[i].level;
                self.uploaded.contains(&(l.partition, l.level, l.epoch))
            })
            .collect();
        match self.fault {
            Fault::BitFlip => {
                if live.is_empty() {
                    return Ok(blocks);
                }
                let i = live[self.rng.gen_range(0..live.len())];
                let bit = self.rng.gen_range(0..blocks[i].0.len() * 8);
                blocks[i].0[bit / 8] ^= 1 << (bit % 8);
                self.fired = true;
            }
            Fault::StaleEpoch => {
                let stale: Vec<(usize, CipherBlock)> =
                    live.iter().filter_map(|&i| self.stale_copy(&requests[i]).map(|b| (i, b))).collect();
                if stale.is_empty() {
                    return Ok(blocks);
                }
                let (i, old) = stale[self.rng.gen_range(0..stale.len())].clone();
                blocks[i] = old;
                self.fired = true;
            }
        }
        Ok(blocks)
    }

    fn store_level(&mut self, upload: LevelUpload) -> StoreResult<()> {
        let l = upload.level;
        let key = (l.partition, l.level);
        let epochs = self.history.entry(key).or_default();
        if epochs.last().map(|(e, _)| *e) != Some(l.epoch) {
            epochs.push((l.epoch, HashMap::new()));
        }
        if let UploadChunk::Plain(blocks) = &upload.chunk {
            let slots = &mut epochs.last_mut().unwrap().1;
            for (k, b) in blocks.iter().enumerate() {
                slots.insert(upload.offset + k as u32, b.clone());
            }
        }
        if upload.offset + upload.chunk.units() == upload.total {
            self.uploaded.insert((l.partition, l.level, l.epoch));
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
