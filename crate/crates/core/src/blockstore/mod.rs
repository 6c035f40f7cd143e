//! The untrusted server's storage contract.
//!
//! A server holds, per partition, an array of levels. A level is filled by
//! one upload (possibly split into chunks) under a strictly larger epoch and
//! is then readable slot by slot until the client marks it unfilled.
//! Levels filled at setup are virtual: they read as all-zero blocks and
//! occupy no storage.

mod file;
mod mem;
mod state;

use crate::crypto::{CipherBlock, NONCE_LEN, TAG_LEN};
use crate::StoreError;

pub use file::FileStore;
pub use mem::MemStore;
pub use state::GenericStore;

pub type StoreResult<T> = std::result::Result<T, StoreError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LevelRef {
    pub partition: u32,
    pub level: u8,
    pub epoch: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockRequest {
    pub level: LevelRef,
    pub offset: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StoreLayout {
    pub partitions: u32,
    pub level_sizes: Vec<u32>,
    /// Physical length of a sealed block.
    pub block_len: u32,
    /// Length charged per block in byte counters (differs from `block_len`
    /// only for metadata-only runs).
    pub accounted_len: u32,
    pub delete_on_read: bool,
    /// Per partition, bit `ℓ` set when level `ℓ` starts out filled (virtual).
    pub initial_fill: Vec<u64>,
}

impl StoreLayout {
    pub fn levels(&self) -> usize {
        self.level_sizes.len()
    }
}

/// Largest sealed metadata list a level of `size` slots can carry.
pub fn meta_capacity(size: u32) -> usize {
    NONCE_LEN + TAG_LEN + META_ENTRY_LEN * size as usize
}

/// Plaintext bytes per metadata entry: id (u64) and read flag (u8).
pub const META_ENTRY_LEN: usize = 9;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum UploadChunk {
    /// Blocks for consecutive slots.
    Plain(Vec<CipherBlock>),
    /// Consecutive rows of a compressed level; the server expands them into
    /// all slots once the last row arrives.
    Vandermonde(Vec<Vec<u64>>),
    /// Blocks for consecutive slots that are charged as `accounted` block
    /// transfers. Used when payloads are not materialized.
    Nominal { blocks: Vec<CipherBlock>, accounted: u32 },
}

impl UploadChunk {
    pub fn units(&self) -> u32 {
        match self {
            UploadChunk::Plain(b) => b.len() as u32,
            UploadChunk::Vandermonde(rows) => rows.len() as u32,
            UploadChunk::Nominal { blocks, .. } => blocks.len() as u32,
        }
    }

    /// Block-equivalents crossing the wire.
    pub fn accounted_blocks(&self) -> u64 {
        match self {
            UploadChunk::Plain(b) => b.len() as u64,
            UploadChunk::Vandermonde(rows) => rows.len() as u64,
            UploadChunk::Nominal { accounted, .. } => *accounted as u64,
        }
    }
}

/// One piece of a level upload. The level becomes readable when
/// `offset + chunk.units() == total`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LevelUpload {
    pub level: LevelRef,
    /// First slot (or row) this chunk covers.
    pub offset: u32,
    /// Units in the whole upload: slots, or rows for compressed uploads.
    pub total: u32,
    pub chunk: UploadChunk,
    /// Sealed id list, sent with the final chunk.
    pub meta: Option<Vec<u8>>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TransferStats {
    pub blocks_up: u64,
    pub blocks_down: u64,
    pub bytes_up: u64,
    pub bytes_down: u64,
    pub meta_bytes: u64,
    pub resident_blocks: u64,
    pub peak_server_blocks: u64,
    /// Block operations per client time step; filled in by the client.
    pub per_step_work: Vec<u64>,
}

impl TransferStats {
    pub fn blocks_total(&self) -> u64 {
        self.blocks_up + self.blocks_down
    }
}

/// Storage contract. Batch fetch is the only read primitive.
pub trait BlockStore: Send {
    fn setup(&mut self, layout: &StoreLayout) -> StoreResult<()>;
    /// Returns the blocks in request order in one round trip.
    fn fetch_blocks(&mut self, requests: &[BlockRequest]) -> StoreResult<Vec<CipherBlock>>;
    fn store_level(&mut self, upload: LevelUpload) -> StoreResult<()>;
    fn fetch_meta(&mut self, level: LevelRef) -> StoreResult<Vec<u8>>;
    fn mark_unfilled(&mut self, level: LevelRef) -> StoreResult<()>;
    fn stats(&mut self) -> StoreResult<TransferStats>;
}

impl<T: BlockStore + ?Sized> BlockStore for Box<T> {
    fn setup(&mut self, layout: &StoreLayout) -> StoreResult<()> {
        (**self).setup(layout)
    }
    fn fetch_blocks(&mut self, requests: &[BlockRequest]) -> StoreResult<Vec<CipherBlock>> {
        (**self).fetch_blocks(requests)
    }
    fn store_level(&mut self, upload: LevelUpload) -> StoreResult<()> {
        (**self).store_level(upload)
    }
    fn fetch_meta(&mut self, level: LevelRef) -> StoreResult<Vec<u8>> {
        (**self).fetch_meta(level)
    }
    fn mark_unfilled(&mut self, level: LevelRef) -> StoreResult<()> {
        (**self).mark_unfilled(level)
    }
    fn stats(&mut self) -> StoreResult<TransferStats> {
        (**self).stats()
    }
}
