use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};

use super::state::{GenericStore, SlotBackend};
use super::{meta_capacity, StoreLayout, StoreResult};

/// File-backed slot storage: one file per partition.
///
/// File layout: a header of `L` records `(filled u8, epoch u64 LE, meta_len u32 LE)`,
/// then the block region of every level at fixed offsets, then one metadata
/// region per level sized for its largest sealed id list.
pub struct FileSlots {
    dir: PathBuf,
    block_len: u64,
    block_base: Vec<u64>,
    meta_base: Vec<u64>,
    handles: HashMap<u32, File>,
}

pub type FileStore = GenericStore<FileSlots>;

const HEADER_RECORD: u64 = 13;
const MAX_OPEN_FILES: usize = 128;

impl FileStore {
    /// Stores partition files under `dir`, which must exist.
    pub fn open(dir: impl AsRef<Path>) -> FileStore {
        GenericStore::with_backend(FileSlots {
            dir: dir.as_ref().to_path_buf(),
            block_len: 0,
            block_base: Vec::new(),
            meta_base: Vec::new(),
            handles: HashMap::new(),
        })
    }
}

impl FileSlots {
    fn path(&self, p: u32) -> PathBuf {
        self.dir.join(format!("partition-{p:06}.bin"))
    }

    fn file(&mut self, p: u32) -> StoreResult<&File> {
        if !self.handles.contains_key(&p) {
            if self.handles.len() >= MAX_OPEN_FILES {
                self.handles.clear();
            }
            let f = OpenOptions::new().read(true).write(true).create(true).truncate(false).open(self.path(p))?;
            self.handles.insert(p, f);
        }
        Ok(&self.handles[&p])
    }
}

impl SlotBackend for FileSlots {
    fn reset(&mut self, layout: &StoreLayout) -> StoreResult<()> {
        self.handles.clear();
        self.block_len = layout.block_len as u64;
        let mut offset = HEADER_RECORD * layout.levels() as u64;
        self.block_base = layout
            .level_sizes
            .iter()
            .map(|&s| {
                let base = offset;
                offset += s as u64 * self.block_len;
                base
            })
            .collect();
        self.meta_base = layout
            .level_sizes
            .iter()
            .map(|&s| {
                let base = offset;
                offset += meta_capacity(s) as u64;
                base
            })
            .collect();
        for p in 0..layout.partitions {
            let f = File::create(self.path(p))?;
            f.set_len(offset)?;
        }
        Ok(())
    }

    fn read_slot(&mut self, p: u32, level: u8, offset: u32) -> StoreResult<Vec<u8>> {
        let pos = self.block_base[level as usize] + offset as u64 * self.block_len;
        let mut buf = vec![0u8; self.block_len as usize];
        self.file(p)?.read_exact_at(&mut buf, pos)?;
        Ok(buf)
    }

    fn write_slots(&mut self, p: u32, level: u8, offset: u32, blocks: &[&[u8]]) -> StoreResult<()> {
        let pos = self.block_base[level as usize] + offset as u64 * self.block_len;
        let joined = blocks.concat();
        self.file(p)?.write_all_at(&joined, pos)?;
        Ok(())
    }

    fn write_meta(&mut self, p: u32, level: u8, meta: &[u8]) -> StoreResult<()> {
        let pos = self.meta_base[level as usize];
        self.file(p)?.write_all_at(meta, pos)?;
        Ok(())
    }

    fn read_meta(&mut self, p: u32, level: u8, len: usize) -> StoreResult<Vec<u8>> {
        let pos = self.meta_base[level as usize];
        let mut buf = vec![0u8; len];
        self.file(p)?.read_exact_at(&mut buf, pos)?;
        Ok(buf)
    }

    fn write_header(&mut self, p: u32, level: u8, filled: bool, epoch: u64, meta_len: u32) -> StoreResult<()> {
        let mut rec = [0u8; HEADER_RECORD as usize];
        rec[0] = filled as u8;
        rec[1..9].copy_from_slice(&epoch.to_le_bytes());
        rec[9..13].copy_from_slice(&meta_len.to_le_bytes());
        self.file(p)?.write_all_at(&rec, HEADER_RECORD * level as u64)?;
        Ok(())
    }
}
