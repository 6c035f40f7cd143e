use super::{
    meta_capacity, BlockRequest, BlockStore, LevelRef, LevelUpload, StoreLayout, StoreResult, TransferStats,
    UploadChunk,
};
use crate::crypto::CipherBlock;
use crate::partition::codec::{elements_for, unpack, Accumulator};
use crate::StoreError;

/// Raw slot storage behind [`GenericStore`]; the state machine and the
/// accounting live in `GenericStore` so every backend counts identically.
pub trait SlotBackend: Send {
    fn reset(&mut self, layout: &StoreLayout) -> StoreResult<()>;
    fn read_slot(&mut self, p: u32, level: u8, offset: u32) -> StoreResult<Vec<u8>>;
    fn write_slots(&mut self, p: u32, level: u8, offset: u32, blocks: &[&[u8]]) -> StoreResult<()>;
    fn write_meta(&mut self, p: u32, level: u8, meta: &[u8]) -> StoreResult<()>;
    fn read_meta(&mut self, p: u32, level: u8, len: usize) -> StoreResult<Vec<u8>>;
    /// Records the level header; backends without persistence ignore it.
    fn write_header(&mut self, _p: u32, _level: u8, _filled: bool, _epoch: u64, _meta_len: u32) -> StoreResult<()> {
        Ok(())
    }
    /// Drops storage of an unfilled level.
    fn release(&mut self, _p: u32, _level: u8) {}
}

struct Staging {
    epoch: u64,
    cursor: u32,
    total: u32,
    rows: Option<Accumulator>,
}

#[derive(Default)]
struct ServerLevel {
    filled: bool,
    virtual_: bool,
    epoch: u64,
    present: Vec<bool>,
    present_count: u32,
    meta_len: Option<usize>,
    staging: Option<Staging>,
}

pub struct GenericStore<B> {
    layout: Option<StoreLayout>,
    levels: Vec<Vec<ServerLevel>>,
    stats: TransferStats,
    backend: B,
}

fn protocol<T>(msg: String) -> StoreResult<T> {
    Err(StoreError::Protocol(msg))
}

impl<B: SlotBackend> GenericStore<B> {
    pub fn with_backend(backend: B) -> Self {
        GenericStore { layout: None, levels: Vec::new(), stats: TransferStats::default(), backend }
    }

    fn layout(&self) -> StoreResult<&StoreLayout> {
        self.layout.as_ref().ok_or_else(|| StoreError::Protocol("store used before setup".into()))
    }

    fn check_ref(&self, r: &LevelRef) -> StoreResult<()> {
        let layout = self.layout()?;
        if r.partition >= layout.partitions || r.level as usize >= layout.levels() {
            return protocol(format!("level reference {r:?} outside the layout"));
        }
        Ok(())
    }

    fn level_mut(&mut self, r: &LevelRef) -> &mut ServerLevel {
        &mut self.levels[r.partition as usize][r.level as usize]
    }

    fn add_resident(&mut self, n: u64) {
        self.stats.resident_blocks += n;
        self.stats.peak_server_blocks = self.stats.peak_server_blocks.max(self.stats.resident_blocks);
    }

    fn drop_level(&mut self, r: &LevelRef) -> StoreResult<()> {
        let lvl = self.level_mut(r);
        let freed = lvl.present_count as u64;
        lvl.filled = false;
        lvl.virtual_ = false;
        lvl.present.iter_mut().for_each(|b| *b = false);
        lvl.present_count = 0;
        lvl.meta_len = None;
        let epoch = lvl.epoch;
        self.stats.resident_blocks -= freed;
        self.backend.write_header(r.partition, r.level, false, epoch, 0)?;
        self.backend.release(r.partition, r.level);
        Ok(())
    }

    fn commit(&mut self, r: &LevelRef, meta: Option<Vec<u8>>) -> StoreResult<()> {
        let block_len = self.layout()?.block_len as usize;
        let staging = self.level_mut(r).staging.take().expect("commit without staging");
        if let Some(acc) = staging.rows {
            let rows = acc.finish();
            let blocks: Vec<Vec<u8>> = rows.iter().map(|y| unpack(y, block_len)).collect();
            let refs: Vec<&[u8]> = blocks.iter().map(|b| b.as_slice()).collect();
            self.backend.write_slots(r.partition, r.level, 0, &refs)?;
            let lvl = self.level_mut(r);
            lvl.present.iter_mut().for_each(|b| *b = true);
            let added = blocks.len() as u32 - lvl.present_count;
            lvl.present_count = blocks.len() as u32;
            self.add_resident(added as u64);
        }
        let meta_len = meta.as_ref().map(|m| m.len());
        if let Some(m) = &meta {
            self.backend.write_meta(r.partition, r.level, m)?;
        }
        let lvl = self.level_mut(r);
        lvl.filled = true;
        lvl.virtual_ = false;
        lvl.epoch = staging.epoch;
        lvl.meta_len = meta_len;
        self.backend.write_header(r.partition, r.level, true, staging.epoch, meta_len.unwrap_or(0) as u32)
    }
}

impl<B: SlotBackend> BlockStore for GenericStore<B> {
    fn setup(&mut self, layout: &StoreLayout) -> StoreResult<()> {
        if layout.initial_fill.len() != layout.partitions as usize || layout.levels() == 0 || layout.levels() > 64 {
            return protocol("inconsistent layout".into());
        }
        self.backend.reset(layout)?;
        self.levels = (0..layout.partitions as usize)
            .map(|p| {
                layout
                    .level_sizes
                    .iter()
                    .enumerate()
                    .map(|(l, &size)| {
                        let filled = layout.initial_fill[p] >> l & 1 == 1;
                        ServerLevel {
                            filled,
                            virtual_: filled,
                            present: vec![false; size as usize],
                            ..Default::default()
                        }
                    })
                    .collect()
            })
            .collect();
        for (p, fill) in layout.initial_fill.iter().enumerate() {
            for l in 0..layout.levels() {
                self.backend.write_header(p as u32, l as u8, fill >> l & 1 == 1, 0, 0)?;
            }
        }
        self.layout = Some(layout.clone());
        self.stats = TransferStats::default();
        Ok(())
    }

    fn fetch_blocks(&mut self, requests: &[BlockRequest]) -> StoreResult<Vec<CipherBlock>> {
        let (block_len, accounted, delete) = {
            let l = self.layout()?;
            (l.block_len as usize, l.accounted_len as u64, l.delete_on_read)
        };
        for req in requests {
            self.check_ref(&req.level)?;
            let lvl = &self.levels[req.level.partition as usize][req.level.level as usize];
            if !lvl.filled {
                return protocol(format!("fetch from unfilled level {:?}", req.level));
            }
            if lvl.epoch != req.level.epoch {
                return protocol(format!("stale epoch {} for level {:?} (current {})", req.level.epoch, req.level, lvl.epoch));
            }
            if req.offset as usize >= lvl.present.len() {
                return protocol(format!("offset {} outside level {:?}", req.offset, req.level));
            }
        }
        let mut out = Vec::with_capacity(requests.len());
        for req in requests {
            let r = req.level;
            let lvl = &self.levels[r.partition as usize][r.level as usize];
            let block = if lvl.virtual_ {
                vec![0u8; block_len]
            } else if !lvl.present[req.offset as usize] {
                return protocol(format!("slot {} of {:?} was already consumed", req.offset, r));
            } else {
                let b = self.backend.read_slot(r.partition, r.level, req.offset)?;
                if delete {
                    let lvl = self.level_mut(&r);
                    lvl.present[req.offset as usize] = false;
                    lvl.present_count -= 1;
                    self.stats.resident_blocks -= 1;
                }
                b
            };
            out.push(CipherBlock(block));
        }
        self.stats.blocks_down += requests.len() as u64;
        self.stats.bytes_down += requests.len() as u64 * accounted;
        Ok(out)
    }

    fn store_level(&mut self, upload: LevelUpload) -> StoreResult<()> {
        let r = upload.level;
        self.check_ref(&r)?;
        let layout = self.layout()?;
        let (block_len, accounted_len) = (layout.block_len as usize, layout.accounted_len as u64);
        let size = layout.level_sizes[r.level as usize];
        let is_top = r.level as usize + 1 == layout.levels();
        let compressed = matches!(upload.chunk, UploadChunk::Vandermonde(_));
        let expected_total = if compressed { size / 2 } else { size };
        if upload.total != expected_total {
            return protocol(format!("upload of {} units into level of {size} slots", upload.total));
        }
        let units = upload.chunk.units();
        if upload.offset + units > upload.total {
            return protocol("upload chunk overruns the level".into());
        }
        match &upload.chunk {
            UploadChunk::Plain(blocks) | UploadChunk::Nominal { blocks, .. } => {
                if let Some(b) = blocks.iter().find(|b| b.len() != block_len) {
                    return protocol(format!("block of {} bytes, expected {block_len}", b.len()));
                }
            }
            UploadChunk::Vandermonde(rows) => {
                let cols = elements_for(block_len);
                if rows.iter().any(|row| row.len() != cols) {
                    return protocol("compressed row of wrong width".into());
                }
            }
        }
        if let Some(m) = &upload.meta {
            if upload.offset + units != upload.total || m.len() > meta_capacity(size) {
                return protocol("metadata must accompany the final chunk and fit the level".into());
            }
        }

        if upload.offset == 0 {
            let lvl = &self.levels[r.partition as usize][r.level as usize];
            if r.epoch <= lvl.epoch {
                return protocol(format!("epoch {} does not advance level {:?} (at {})", r.epoch, r, lvl.epoch));
            }
            if lvl.filled {
                if !is_top {
                    return protocol(format!("store over filled level {r:?}"));
                }
                let current = LevelRef { epoch: lvl.epoch, ..r };
                self.drop_level(&current)?;
            }
            let rows = compressed.then(|| Accumulator::new(size as usize, elements_for(block_len)));
            self.level_mut(&r).staging = Some(Staging { epoch: r.epoch, cursor: 0, total: upload.total, rows });
        } else {
            let lvl = &self.levels[r.partition as usize][r.level as usize];
            match &lvl.staging {
                Some(s) if s.epoch == r.epoch && s.cursor == upload.offset && s.total == upload.total
                    && s.rows.is_some() == compressed => {}
                _ => return protocol(format!("out-of-order upload chunk at {} for {r:?}", upload.offset)),
            }
        }

        match &upload.chunk {
            UploadChunk::Plain(blocks) | UploadChunk::Nominal { blocks, .. } => {
                let refs: Vec<&[u8]> = blocks.iter().map(|b| b.as_bytes()).collect();
                self.backend.write_slots(r.partition, r.level, upload.offset, &refs)?;
                let lvl = self.level_mut(&r);
                let mut added = 0;
                for i in upload.offset..upload.offset + units {
                    if !std::mem::replace(&mut lvl.present[i as usize], true) {
                        added += 1;
                    }
                }
                lvl.present_count += added;
                self.add_resident(added as u64);
            }
            UploadChunk::Vandermonde(rows) => {
                let acc = self.level_mut(&r).staging.as_mut().unwrap().rows.as_mut().unwrap();
                for row in rows {
                    acc.absorb(row);
                }
            }
        }
        let blocks = upload.chunk.accounted_blocks();
        self.stats.blocks_up += blocks;
        self.stats.bytes_up += blocks * accounted_len;
        if let Some(m) = &upload.meta {
            self.stats.meta_bytes += m.len() as u64;
        }
        let staging = self.level_mut(&r).staging.as_mut().unwrap();
        staging.cursor += units;
        if staging.cursor == staging.total {
            self.commit(&r, upload.meta)?;
        }
        Ok(())
    }

    fn fetch_meta(&mut self, r: LevelRef) -> StoreResult<Vec<u8>> {
        self.check_ref(&r)?;
        let lvl = &self.levels[r.partition as usize][r.level as usize];
        if !lvl.filled || lvl.epoch != r.epoch {
            return protocol(format!("metadata of unfilled or stale level {r:?}"));
        }
        let Some(len) = lvl.meta_len else {
            return protocol(format!("level {r:?} carries no metadata"));
        };
        let meta = self.backend.read_meta(r.partition, r.level, len)?;
        self.stats.meta_bytes += meta.len() as u64;
        Ok(meta)
    }

    fn mark_unfilled(&mut self, r: LevelRef) -> StoreResult<()> {
        self.check_ref(&r)?;
        let lvl = &self.levels[r.partition as usize][r.level as usize];
        if !lvl.filled || lvl.epoch != r.epoch {
            return protocol(format!("mark_unfilled on unfilled or stale level {r:?}"));
        }
        self.drop_level(&r)
    }

    fn stats(&mut self) -> StoreResult<TransferStats> {
        Ok(self.stats.clone())
    }
}
