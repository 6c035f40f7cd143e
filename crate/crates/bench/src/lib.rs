//! Fixtures shared by the benchmarks.

use partoram::sim::payload_for;
use partoram::{Op, Oram, OramConfig, PayloadMode};

/// An ORAM with every block written once, so reads hit real blocks.
pub fn warmed(cfg: OramConfig) -> Oram {
    let mut oram = Oram::in_memory(cfg).expect("valid benchmark config");
    let len = oram.payload_len();
    for id in 0..oram.config().n {
        oram.write(id, payload_for(id, len)).expect("warm-up write");
    }
    oram
}

pub fn full(n: u64, block_size: usize) -> OramConfig {
    OramConfig::builder(n).block_size(block_size).seed(1).build().expect("valid benchmark config")
}

pub fn metadata(n: u64) -> OramConfig {
    OramConfig::builder(n)
        .block_size(64)
        .payload_mode(PayloadMode::MetadataOnly)
        .seed(1)
        .build()
        .expect("valid benchmark config")
}

/// Cycles through a mix of reads and writes over all ids.
pub struct Driver {
    next: u64,
}

impl Driver {
    pub fn new() -> Driver {
        Driver { next: 0 }
    }

    pub fn step(&mut self, oram: &mut Oram) {
        let n = oram.config().n;
        let id = self.next.wrapping_mul(0x9e37_79b9) % n;
        let op = if self.next.is_multiple_of(2) { Op::Read } else { Op::Write(payload_for(self.next, oram.payload_len())) };
        oram.access(op, id).expect("benchmark access");
        self.next += 1;
    }
}

impl Default for Driver {
    fn default() -> Self {
        Driver::new()
    }
}
