//! Configuration, derived geometry and the `key = value` config file format.

use std::fmt;
use std::str::FromStr;

use crate::{OramError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvictAlgo {
    Sequential,
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PayloadMode {
    /// Blocks carry real payload bytes.
    Full,
    /// Blocks carry only their identifier; byte counters are computed from B.
    MetadataOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PosMapMode {
    Plain,
    CounterCompressed,
}

/// How the fresh cache slot of an accessed block is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SlotChoice {
    Random,
    /// `PRF(id, j) mod P` where `j` counts accesses to `id`.
    CounterPrf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CipherSuite {
    /// AES-128-GCM with a random 96-bit nonce.
    Aead,
    /// Identity framing plus a keyed checksum; same sizes, cheap for the empty
    /// payloads of metadata-only runs.
    Sim,
}

/// Real-block capacity `S` of a partition.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CapacityRule {
    /// `max(⌈1.15·m⌉, ⌈m + 6·√m⌉)` with `m = N/P`.
    Empirical,
    /// `⌈m + (k + c)·ln N⌉`.
    Analytic { k: f64, c: f64 },
    Fixed(u32),
}

macro_rules! keyword_enum {
    ($ty:ident { $($variant:ident => [$($word:literal),+]),+ $(,)? }) => {
        impl FromStr for $ty {
            type Err = OramError;
            fn from_str(s: &str) -> Result<Self> {
                let lower = s.trim().to_ascii_lowercase();
                $( if [$($word),+].contains(&lower.as_str()) { return Ok($ty::$variant); } )+
                Err(OramError::Config(format!("unknown {} value {s:?}", stringify!($ty))))
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                match self { $($ty::$variant => f.write_str([$($word),+][0]),)+ }
            }
        }
    };
}

keyword_enum!(EvictAlgo { Sequential => ["seq", "sequential"], Random => ["rand", "random"] });
keyword_enum!(PayloadMode { Full => ["full"], MetadataOnly => ["metadata", "metadata_only", "metadataonly"] });
keyword_enum!(PosMapMode { Plain => ["plain"], CounterCompressed => ["compressed", "counter_compressed", "countercompressed"] });
keyword_enum!(SlotChoice { Random => ["random"], CounterPrf => ["prf", "counter_prf", "counterprf"] });
keyword_enum!(CipherSuite { Aead => ["aead", "aes-gcm"], Sim => ["sim", "checksum"] });

#[derive(Clone, Debug, PartialEq)]
pub struct OramConfig {
    pub n: u64,
    pub block_size: usize,
    /// Defaults to `⌈√N⌉`.
    pub partitions: Option<u32>,
    pub nu: f64,
    pub evict_algo: EvictAlgo,
    pub piggyback: bool,
    pub concurrent: bool,
    pub delete_on_read: bool,
    pub compression: bool,
    pub recursive: bool,
    pub recursion_threshold: u64,
    /// Overrides the derived compression rate of the recursive map.
    pub alpha: Option<u32>,
    pub seed: u64,
    pub payload_mode: PayloadMode,
    pub posmap: PosMapMode,
    pub slot_choice: SlotChoice,
    /// Defaults to `Aead` for full payloads and `Sim` for metadata-only runs.
    pub cipher: Option<CipherSuite>,
    pub capacity: CapacityRule,
    /// Shuffle budget per time step is `⌊w·log₂ S⌋` blocks.
    pub work_factor: f64,
}

impl OramConfig {
    pub fn builder(n: u64) -> OramConfigBuilder {
        OramConfigBuilder { cfg: OramConfig { n, ..OramConfig::default() } }
    }

    pub fn cipher_suite(&self) -> CipherSuite {
        self.cipher.unwrap_or(match self.payload_mode {
            PayloadMode::Full => CipherSuite::Aead,
            PayloadMode::MetadataOnly => CipherSuite::Sim,
        })
    }

    /// Payload bytes physically carried by a block.
    pub fn payload_len(&self) -> usize {
        match self.payload_mode {
            PayloadMode::Full => self.block_size,
            PayloadMode::MetadataOnly => 0,
        }
    }

    pub fn slot_choice(&self) -> SlotChoice {
        match self.posmap {
            PosMapMode::CounterCompressed => SlotChoice::CounterPrf,
            PosMapMode::Plain => self.slot_choice,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(OramError::Config(m));
        if self.n == 0 || self.n >= 1 << 48 {
            return bad(format!("N must be in [1, 2^48), got {}", self.n));
        }
        if self.payload_mode == PayloadMode::Full && self.block_size == 0 {
            return bad("B must be at least 1 with full payloads".into());
        }
        if !(self.nu >= 0.0 && self.nu.is_finite()) {
            return bad(format!("nu must be a finite non-negative number, got {}", self.nu));
        }
        if self.evict_algo == EvictAlgo::Random && self.nu.fract() != 0.0 {
            return bad(format!("random eviction needs an integer nu, got {}", self.nu));
        }
        if let Some(p) = self.partitions {
            if p == 0 || p as u64 > self.n {
                return bad(format!("partition count {p} outside [1, N]"));
            }
        }
        if !(self.work_factor > 0.0) {
            return bad("work factor must be positive".into());
        }
        if self.recursive && (self.posmap != PosMapMode::Plain || self.slot_choice() != SlotChoice::Random) {
            return bad("recursion needs the plain position map with random slot choice".into());
        }
        if let CapacityRule::Analytic { k, c } = self.capacity {
            if !(k > 0.0 && c > 0.0) {
                return bad("analytic capacity needs k, c > 0".into());
            }
        }
        Ok(())
    }

    pub fn geometry(&self) -> Result<Geometry> {
        self.validate()?;
        Ok(Geometry::new(self.n, self.partitions, self.capacity))
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| OramError::Config(format!("bad value {v:?} for {key}")))
        }
        fn flag(key: &str, v: &str) -> Result<bool> {
            match v.to_ascii_lowercase().as_str() {
                "1" | "true" | "yes" | "on" => Ok(true),
                "0" | "false" | "no" | "off" => Ok(false),
                _ => Err(OramError::Config(format!("bad flag {v:?} for {key}"))),
            }
        }
        let v = value.trim();
        match key.trim() {
            "N" | "n" => self.n = parse_size(v)?,
            "B" | "block_size" => self.block_size = parse_size(v)? as usize,
            "P" | "partitions" => self.partitions = Some(num(key, v)?),
            "nu" => self.nu = num(key, v)?,
            "evict_algo" | "evict" => self.evict_algo = v.parse()?,
            "piggyback" => self.piggyback = flag(key, v)?,
            "concurrent" => self.concurrent = flag(key, v)?,
            "delete_on_read" => self.delete_on_read = flag(key, v)?,
            "compression" | "compress" => self.compression = flag(key, v)?,
            "recursive" => self.recursive = flag(key, v)?,
            "recursion_threshold" => self.recursion_threshold = num(key, v)?,
            "alpha" => self.alpha = Some(num(key, v)?),
            "seed" => self.seed = num(key, v)?,
            "payload_mode" => self.payload_mode = v.parse()?,
            "posmap" => self.posmap = v.parse()?,
            "slot_choice" => self.slot_choice = v.parse()?,
            "cipher" => self.cipher = Some(v.parse()?),
            "capacity" => self.capacity = parse_capacity(v)?,
            "work_factor" | "w" => self.work_factor = num(key, v)?,
            other => return Err(OramError::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Reads a flat `key = value` file; `#` starts a comment.
    pub fn from_config_text(text: &str) -> Result<Self> {
        let mut cfg = OramConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| OramError::Config(format!("line {}: expected key = value", lineno + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }
}

fn parse_size(v: &str) -> Result<u64> {
    let err = || OramError::Config(format!("bad size {v:?}"));
    if let Some(exp) = v.strip_prefix("2^") {
        let e: u32 = exp.parse().map_err(|_| err())?;
        return 1u64.checked_shl(e).filter(|_| e < 64).ok_or_else(err);
    }
    let lower = v.to_ascii_lowercase();
    let (digits, mult) = match lower.strip_suffix("kb").or_else(|| lower.strip_suffix('k')) {
        Some(d) => (d, 1024),
        None => match lower.strip_suffix("mb").or_else(|| lower.strip_suffix('m')) {
            Some(d) => (d, 1 << 20),
            None => (lower.as_str(), 1),
        },
    };
    digits.trim().parse::<u64>().map(|d| d * mult).map_err(|_| err())
}

fn parse_capacity(v: &str) -> Result<CapacityRule> {
    let lower = v.to_ascii_lowercase();
    if lower == "empirical" {
        return Ok(CapacityRule::Empirical);
    }
    if let Some(rest) = lower.strip_prefix("analytic") {
        let rest = rest.trim_start_matches([':', ' ']);
        if rest.is_empty() {
            return Ok(CapacityRule::Analytic { k: 1.0, c: 2.0 });
        }
        let (k, c) = rest.split_once(',').ok_or_else(|| OramError::Config(format!("bad capacity {v:?}")))?;
        let k = k.trim().parse().map_err(|_| OramError::Config(format!("bad capacity {v:?}")))?;
        let c = c.trim().parse().map_err(|_| OramError::Config(format!("bad capacity {v:?}")))?;
        return Ok(CapacityRule::Analytic { k, c });
    }
    lower.parse().map(CapacityRule::Fixed).map_err(|_| OramError::Config(format!("bad capacity {v:?}")))
}

impl Default for OramConfig {
    fn default() -> Self {
        OramConfig {
            n: 1 << 10,
            block_size: 64,
            partitions: None,
            nu: 0.5,
            evict_algo: EvictAlgo::Sequential,
            piggyback: true,
            concurrent: false,
            delete_on_read: false,
            compression: false,
            recursive: false,
            recursion_threshold: 1024,
            alpha: None,
            seed: 0,
            payload_mode: PayloadMode::Full,
            posmap: PosMapMode::Plain,
            slot_choice: SlotChoice::Random,
            cipher: None,
            capacity: CapacityRule::Empirical,
            work_factor: 16.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct OramConfigBuilder {
    cfg: OramConfig,
}

macro_rules! setters {
    ($($name:ident: $ty:ty),+ $(,)?) => {
        $(pub fn $name(mut self, v: $ty) -> Self { self.cfg.$name = v; self })+
    };
}

impl OramConfigBuilder {
    setters!(
        block_size: usize,
        nu: f64,
        evict_algo: EvictAlgo,
        piggyback: bool,
        concurrent: bool,
        delete_on_read: bool,
        compression: bool,
        recursive: bool,
        recursion_threshold: u64,
        seed: u64,
        payload_mode: PayloadMode,
        posmap: PosMapMode,
        slot_choice: SlotChoice,
        capacity: CapacityRule,
        work_factor: f64,
    );

    pub fn partitions(mut self, p: u32) -> Self {
        self.cfg.partitions = Some(p);
        self
    }

    pub fn alpha(mut self, a: u32) -> Self {
        self.cfg.alpha = Some(a);
        self
    }

    pub fn cipher(mut self, c: CipherSuite) -> Self {
        self.cfg.cipher = Some(c);
        self
    }

    pub fn build(self) -> Result<OramConfig> {
        self.cfg.validate()?;
        Ok(self.cfg)
    }
}

/// Sizes derived from a configuration.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Geometry {
    pub n: u64,
    pub partitions: u32,
    /// Level count L; the top level is `L - 1`.
    pub levels: u8,
    /// Real-block capacity S of a partition.
    pub capacity: u32,
    pub level_sizes: Vec<u32>,
}

impl Geometry {
    pub fn new(n: u64, partitions: Option<u32>, rule: CapacityRule) -> Geometry {
        let p = partitions.unwrap_or_else(|| ceil_sqrt(n) as u32).max(1);
        let levels = (31 - p.leading_zeros()) as u8 + 1;
        let m = n as f64 / p as f64;
        let s = match rule {
            CapacityRule::Empirical => (1.15 * m).ceil().max((m + 6.0 * m.sqrt()).ceil()),
            CapacityRule::Analytic { k, c } => (m + (k + c) * (n as f64).ln()).ceil(),
            CapacityRule::Fixed(s) => s as f64,
        };
        let top = levels - 1;
        let capacity = (s as u32).max(1 << top).max(1);
        let level_sizes = (0..levels).map(|l| if l == top { 2 * capacity } else { 2 << l }).collect();
        Geometry { n, partitions: p, levels, capacity, level_sizes }
    }

    pub fn top(&self) -> u8 {
        self.levels - 1
    }

    pub fn size(&self, level: u8) -> u32 {
        self.level_sizes[level as usize]
    }

    /// Blocks a reshuffle must read from a level; also its real-block limit.
    pub fn half(&self, level: u8) -> u32 {
        self.level_sizes[level as usize] / 2
    }

    /// Server slots of one partition across all levels.
    pub fn partition_slots(&self) -> u64 {
        self.level_sizes.iter().map(|&s| s as u64).sum()
    }

    /// Number of possible initial fill patterns of the non-top levels.
    pub fn fill_patterns(&self) -> u64 {
        1u64 << self.top()
    }
}

pub fn ceil_sqrt(n: u64) -> u64 {
    let mut r = (n as f64).sqrt() as u64;
    while r * r > n {
        r -= 1;
    }
    while r * r < n {
        r += 1;
    }
    r
}
