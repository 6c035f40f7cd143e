//! Block identifiers, positions and the client position map.

use crate::config::{Geometry, PosMapMode};
use crate::crypto::Prf;
use crate::{OramError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BlockId {
    Dummy,
    Real(u64),
}

impl BlockId {
    const DUMMY: u64 = u64::MAX;

    pub fn encode(self) -> u64 {
        match self {
            BlockId::Dummy => Self::DUMMY,
            BlockId::Real(id) => id,
        }
    }

    pub fn decode(raw: u64) -> BlockId {
        if raw == Self::DUMMY {
            BlockId::Dummy
        } else {
            BlockId::Real(raw)
        }
    }

    pub fn real(self) -> Option<u64> {
        match self {
            BlockId::Dummy => None,
            BlockId::Real(id) => Some(id),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    pub id: BlockId,
    pub payload: Vec<u8>,
}

impl Block {
    pub fn dummy(payload_len: usize) -> Block {
        Block { id: BlockId::Dummy, payload: vec![0; payload_len] }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Position {
    Server { p: u32, level: u8, index: u32 },
    /// Client resident on behalf of partition `s`: in cache slot `s`, or
    /// evicted to `s` and waiting in a pending shuffle job.
    CacheSlot(u32),
    /// Never written; reads as zeros.
    Zeroed,
}

/// Slot choice under the counter scheme: `PRF(id, j) mod P`.
pub fn prf_slot(prf: &Prf, id: u64, j: u32, partitions: u32) -> u32 {
    (prf.eval(b"slot", &[id, j as u64]) % partitions as u64) as u32
}

/// Memory footprint of a position map.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MemoryEstimate {
    /// Bytes held by this implementation.
    pub actual_bytes: u64,
    /// Model figure for a counter-compressed map (0.255 bytes per block).
    pub model_bytes: Option<u64>,
}

pub const COMPRESSED_BYTES_PER_BLOCK: f64 = 0.255;

pub struct PositionMap {
    n: u64,
    partitions: u32,
    level_sizes: Vec<u32>,
    inner: Inner,
}

enum Inner {
    Plain { entries: Vec<u64>, counters: Option<Vec<u32>>, fields: Fields },
    Compressed { entries: Vec<CompressedEntry>, prf: Prf },
}

/// Plain entry layout, little-endian bit fields in one `u64`:
/// `[0,2)` tag (0 zeroed, 1 server, 2 cache), then partition/slot,
/// level and index fields, each as wide as the geometry requires.
#[derive(Clone, Copy, Debug)]
struct Fields {
    p_bits: u32,
    l_bits: u32,
    i_bits: u32,
}

const TAG_ZEROED: u64 = 0;
const TAG_SERVER: u64 = 1;
const TAG_CACHE: u64 = 2;

fn bits_for(max_value: u64) -> u32 {
    (64 - max_value.leading_zeros()).max(1)
}

impl Fields {
    fn encode(&self, pos: Position) -> u64 {
        match pos {
            Position::Zeroed => TAG_ZEROED,
            Position::CacheSlot(s) => TAG_CACHE | (s as u64) << 2,
            Position::Server { p, level, index } => {
                let mut x = TAG_SERVER | (p as u64) << 2;
                x |= (level as u64) << (2 + self.p_bits);
                x | (index as u64) << (2 + self.p_bits + self.l_bits)
            }
        }
    }

    fn decode(&self, x: u64) -> Position {
        let field = |shift: u32, bits: u32| (x >> shift) & ((1u64 << bits) - 1);
        match x & 3 {
            TAG_SERVER => Position::Server {
                p: field(2, self.p_bits) as u32,
                level: field(2 + self.p_bits, self.l_bits) as u8,
                index: field(2 + self.p_bits + self.l_bits, self.i_bits) as u32,
            },
            TAG_CACHE => Position::CacheSlot(field(2, self.p_bits) as u32),
            _ => Position::Zeroed,
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
struct CompressedEntry {
    counter: u32,
    level: u8,
    index: u32,
}

const LEVEL_ZEROED: u8 = 0xff;
const LEVEL_CACHE: u8 = 0xfe;

impl PositionMap {
    /// `prf` keys the counter-compressed partition derivation and is ignored in plain mode.
    pub fn new(mode: PosMapMode, geom: &Geometry, prf: &Prf, with_counters: bool) -> Result<PositionMap> {
        let n = geom.n;
        let inner = match mode {
            PosMapMode::Plain => {
                let max_size = *geom.level_sizes.iter().max().unwrap_or(&1) as u64;
                let fields = Fields {
                    p_bits: bits_for(geom.partitions.saturating_sub(1) as u64),
                    l_bits: bits_for(geom.levels.saturating_sub(1) as u64),
                    i_bits: bits_for(max_size.saturating_sub(1)),
                };
                if 2 + fields.p_bits + fields.l_bits + fields.i_bits > 64 {
                    return Err(OramError::Config("position entry does not fit 64 bits".into()));
                }
                Inner::Plain {
                    entries: vec![TAG_ZEROED; n as usize],
                    counters: with_counters.then(|| vec![0; n as usize]),
                    fields,
                }
            }
            PosMapMode::CounterCompressed => Inner::Compressed {
                entries: vec![CompressedEntry { level: LEVEL_ZEROED, ..Default::default() }; n as usize],
                prf: prf.clone(),
            },
        };
        Ok(PositionMap { n, partitions: geom.partitions, level_sizes: geom.level_sizes.clone(), inner })
    }

    pub fn mode(&self) -> PosMapMode {
        match self.inner {
            Inner::Plain { .. } => PosMapMode::Plain,
            Inner::Compressed { .. } => PosMapMode::CounterCompressed,
        }
    }

    pub fn len(&self) -> u64 {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    fn check_id(&self, id: u64) -> Result<usize> {
        if id >= self.n {
            return Err(OramError::Domain(format!("block id {id} outside [0, {})", self.n)));
        }
        Ok(id as usize)
    }

    fn check_pos(&self, pos: Position) -> Result<()> {
        let ok = match pos {
            Position::Zeroed => true,
            Position::CacheSlot(s) => s < self.partitions,
            Position::Server { p, level, index } => {
                p < self.partitions
                    && (level as usize) < self.level_sizes.len()
                    && index < self.level_sizes[level as usize]
            }
        };
        if ok {
            Ok(())
        } else {
            Err(OramError::Domain(format!("malformed position {pos:?}")))
        }
    }

    pub fn get(&self, id: u64) -> Result<Position> {
        let i = self.check_id(id)?;
        Ok(match &self.inner {
            Inner::Plain { entries, fields, .. } => fields.decode(entries[i]),
            Inner::Compressed { entries, prf } => {
                let e = entries[i];
                let part = prf_slot(prf, id, e.counter, self.partitions);
                match e.level {
                    LEVEL_ZEROED => Position::Zeroed,
                    LEVEL_CACHE => Position::CacheSlot(part),
                    level => Position::Server { p: part, level, index: e.index },
                }
            }
        })
    }

    pub fn set(&mut self, id: u64, pos: Position) -> Result<()> {
        let i = self.check_id(id)?;
        self.check_pos(pos)?;
        let partitions = self.partitions;
        match &mut self.inner {
            Inner::Plain { entries, fields, .. } => entries[i] = fields.encode(pos),
            Inner::Compressed { entries, prf } => {
                let e = &mut entries[i];
                let derived = prf_slot(prf, id, e.counter, partitions);
                match pos {
                    Position::Zeroed => e.level = LEVEL_ZEROED,
                    Position::CacheSlot(s) | Position::Server { p: s, .. } if s != derived => {
                        return Err(OramError::Domain(format!(
                            "partition {s} for block {id} disagrees with its counter-derived partition {derived}"
                        )))
                    }
                    Position::CacheSlot(_) => e.level = LEVEL_CACHE,
                    Position::Server { level, index, .. } => {
                        e.level = level;
                        e.index = index;
                    }
                }
            }
        }
        Ok(())
    }

    /// Access counter `j` of `id`, when counters are kept.
    pub fn counter(&self, id: u64) -> Result<Option<u32>> {
        let i = self.check_id(id)?;
        Ok(match &self.inner {
            Inner::Plain { counters, .. } => counters.as_ref().map(|c| c[i]),
            Inner::Compressed { entries, .. } => Some(entries[i].counter),
        })
    }

    pub(crate) fn bump_counter(&mut self, id: u64) -> Result<()> {
        let i = self.check_id(id)?;
        match &mut self.inner {
            Inner::Plain { counters: Some(c), .. } => c[i] += 1,
            Inner::Plain { counters: None, .. } => {}
            Inner::Compressed { entries, .. } => entries[i].counter += 1,
        }
        Ok(())
    }

    pub fn memory_estimate(&self) -> MemoryEstimate {
        match &self.inner {
            Inner::Plain { entries, counters, .. } => MemoryEstimate {
                actual_bytes: entries.len() as u64 * 8 + counters.as_ref().map_or(0, |c| c.len() as u64 * 4),
                model_bytes: None,
            },
            Inner::Compressed { entries, .. } => MemoryEstimate {
                actual_bytes: entries.len() as u64 * std::mem::size_of::<CompressedEntry>() as u64,
                model_bytes: Some(Self::compressed_model_bytes(self.n)),
            },
        }
    }

    /// Model size of a counter-compressed map over `n` blocks.
    pub fn compressed_model_bytes(n: u64) -> u64 {
        (n as f64 * COMPRESSED_BYTES_PER_BLOCK).round() as u64
    }

    /// Empirical entropy, in bits, of the level field over server-resident blocks.
    pub fn level_entropy_bits(&self) -> f64 {
        let mut counts = vec![0u64; self.level_sizes.len()];
        for id in 0..self.n {
            if let Ok(Position::Server { level, .. }) = self.get(id) {
                counts[level as usize] += 1;
            }
        }
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return 0.0;
        }
        counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let q = c as f64 / total as f64;
                -q * q.log2()
            })
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::CapacityRule;

    fn geom(n: u64) -> Geometry {
        Geometry::new(n, None, CapacityRule::Empirical)
    }

    fn prf() -> Prf {
        Prf::new(b"posmap-test")
    }

    #[test]
    fn plain_get_set() {
        let g = geom(1 << 10);
        let mut m = PositionMap::new(PosMapMode::Plain, &g, &prf(), false).unwrap();
        assert_eq!(m.get(7).unwrap(), Position::Zeroed);
        m.set(7, Position::Server { p: 3, level: 2, index: 5 }).unwrap();
        assert_eq!(m.get(7).unwrap(), Position::Server { p: 3, level: 2, index: 5 });
        m.set(0, Position::CacheSlot(4)).unwrap();
        assert_eq!(m.get(0).unwrap(), Position::CacheSlot(4));
        m.set(0, Position::CacheSlot(9)).unwrap();
        assert_eq!(m.get(0).unwrap(), Position::CacheSlot(9));
        let top = g.top();
        m.set(1, Position::Server { p: 31, level: top, index: g.size(top) - 1 }).unwrap();
        assert_eq!(m.get(1).unwrap(), Position::Server { p: 31, level: top, index: g.size(top) - 1 });
    }

    #[test]
    fn plain_rejects_bad_input() {
        let g = geom(1 << 10);
        let mut m = PositionMap::new(PosMapMode::Plain, &g, &prf(), false).unwrap();
        assert!(m.get(1024).is_err());
        assert!(m.set(1024, Position::Zeroed).is_err());
        assert!(m.set(0, Position::CacheSlot(32)).is_err());
        assert!(m.set(0, Position::Server { p: 0, level: 1, index: 4 }).is_err());
        assert!(m.set(0, Position::Server { p: 0, level: 6, index: 0 }).is_err());
    }

    #[test]
    fn plain_memory_is_eight_bytes_per_entry() {
        let g = geom(1 << 10);
        let m = PositionMap::new(PosMapMode::Plain, &g, &prf(), false).unwrap();
        assert_eq!(m.memory_estimate(), MemoryEstimate { actual_bytes: 8192, model_bytes: None });
    }

    #[test]
    fn compressed_model_figures() {
        assert_eq!(PositionMap::compressed_model_bytes(0), 0);
        let gb = PositionMap::compressed_model_bytes(1 << 32) as f64;
        assert!((0.9e9..1.2e9).contains(&gb), "{gb}");
    }

    #[test]
    fn compressed_derives_partition_from_counter() {
        let g = geom(1 << 10);
        let prf = prf();
        let mut m = PositionMap::new(PosMapMode::CounterCompressed, &g, &prf, false).unwrap();
        assert_eq!(m.get(5).unwrap(), Position::Zeroed);
        m.bump_counter(5).unwrap();
        let r = prf_slot(&prf, 5, 1, g.partitions);
        m.set(5, Position::CacheSlot(r)).unwrap();
        assert_eq!(m.get(5).unwrap(), Position::CacheSlot(r));
        assert!(m.set(5, Position::CacheSlot((r + 1) % g.partitions)).is_err());
        m.set(5, Position::Server { p: r, level: 1, index: 3 }).unwrap();
        assert_eq!(m.get(5).unwrap(), Position::Server { p: r, level: 1, index: 3 });
        assert_eq!(m.counter(5).unwrap(), Some(1));
        let est = m.memory_estimate();
        assert_eq!(est.model_bytes, Some(261));
        assert!(est.actual_bytes > est.model_bytes.unwrap());
    }

    #[test]
    fn zero_sized_map() {
        let mut g = geom(1);
        g.n = 0;
        let m = PositionMap::new(PosMapMode::Plain, &g, &prf(), false).unwrap();
        assert_eq!(m.memory_estimate().actual_bytes, 0);
        assert!(m.is_empty());
    }

    #[test]
    fn level_entropy_of_single_level_is_zero() {
        let g = geom(64);
        let mut m = PositionMap::new(PosMapMode::Plain, &g, &prf(), false).unwrap();
        assert_eq!(m.level_entropy_bits(), 0.0);
        m.set(0, Position::Server { p: 0, level: 1, index: 0 }).unwrap();
        m.set(1, Position::Server { p: 0, level: 2, index: 0 }).unwrap();
        assert!((m.level_entropy_bits() - 1.0).abs() < 1e-12);
    }
}
