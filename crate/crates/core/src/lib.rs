//! Partitioned oblivious RAM.
//!
//! The client splits N logical blocks over roughly √N partitions, each a small
//! hierarchical ORAM whose levels are reshuffled under fresh keys. A block is
//! read from its partition and parked in a random cache slot until eviction
//! writes it back somewhere else, so the server only ever sees a stream of
//! uniformly random partition indices.
//!
//! ```
//! use partoram::{Oram, OramConfig};
//!
//! let cfg = OramConfig::builder(1 << 8).block_size(32).seed(7).build().unwrap();
//! let mut oram = Oram::in_memory(cfg).unwrap();
//! oram.write(3, vec![9; 32]).unwrap();
//! assert_eq!(oram.read(3).unwrap(), vec![9; 32]);
//! assert_eq!(oram.read(4).unwrap(), vec![0; 32]);
//! ```

pub mod amortizer;
pub mod blockstore;
pub mod config;
pub mod crypto;
mod error;
pub mod framework;
pub mod posmap;
pub mod partition;
pub mod recursion;
pub mod remote;
pub mod sim;

pub use blockstore::{BlockStore, FileStore, MemStore, TransferStats};
pub use config::{CapacityRule, CipherSuite, EvictAlgo, Geometry, OramConfig, PayloadMode, PosMapMode, SlotChoice};
pub use error::{OramError, StoreError};
pub use framework::{Op, Oram, OramMetrics};
pub use posmap::{BlockId, Position, PositionMap};
pub use recursion::StorageReport;

pub type Result<T, E = OramError> = std::result::Result<T, E>;
