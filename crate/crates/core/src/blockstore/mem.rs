use super::state::{GenericStore, SlotBackend};
use super::{StoreLayout, StoreResult};

/// In-memory slot storage: one contiguous buffer per level, allocated on first write.
#[derive(Default)]
pub struct MemSlots {
    block_len: usize,
    sizes: Vec<u32>,
    data: Vec<Vec<Vec<u8>>>,
    meta: Vec<Vec<Vec<u8>>>,
}

pub type MemStore = GenericStore<MemSlots>;

impl MemStore {
    pub fn new() -> MemStore {
        GenericStore::with_backend(MemSlots::default())
    }
}

impl Default for MemStore {
    fn default() -> Self {
        MemStore::new()
    }
}

impl SlotBackend for MemSlots {
    fn reset(&mut self, layout: &StoreLayout) -> StoreResult<()> {
        self.block_len = layout.block_len as usize;
        self.sizes = layout.level_sizes.clone();
        self.data = vec![vec![Vec::new(); layout.levels()]; layout.partitions as usize];
        self.meta = vec![vec![Vec::new(); layout.levels()]; layout.partitions as usize];
        Ok(())
    }

    fn read_slot(&mut self, p: u32, level: u8, offset: u32) -> StoreResult<Vec<u8>> {
        let buf = &self.data[p as usize][level as usize];
        let start = offset as usize * self.block_len;
        Ok(buf[start..start + self.block_len].to_vec())
    }

    fn write_slots(&mut self, p: u32, level: u8, offset: u32, blocks: &[&[u8]]) -> StoreResult<()> {
        let buf = &mut self.data[p as usize][level as usize];
        if buf.is_empty() {
            buf.resize(self.sizes[level as usize] as usize * self.block_len, 0);
        }
        for (i, b) in blocks.iter().enumerate() {
            let start = (offset as usize + i) * self.block_len;
            buf[start..start + self.block_len].copy_from_slice(b);
        }
        Ok(())
    }

    fn write_meta(&mut self, p: u32, level: u8, meta: &[u8]) -> StoreResult<()> {
        self.meta[p as usize][level as usize] = meta.to_vec();
        Ok(())
    }

    fn read_meta(&mut self, p: u32, level: u8, _len: usize) -> StoreResult<Vec<u8>> {
        Ok(self.meta[p as usize][level as usize].clone())
    }
}
