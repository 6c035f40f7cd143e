use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Zipf};

use crate::{OramError, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum WorkloadKind {
    /// Ids `0, 1, …, N−1, 0, …`.
    RoundRobin,
    Uniform,
    /// Zipf with exponent `s` over ranks `1..=N`, rank `r` mapped to id `r − 1`.
    Zipf(f64),
    /// Every request goes to id 0.
    SingleHot,
}

impl FromStr for WorkloadKind {
    type Err = OramError;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        Ok(match lower.as_str() {
            "round-robin" | "roundrobin" | "rr" => WorkloadKind::RoundRobin,
            "uniform" => WorkloadKind::Uniform,
            "single-hot" | "singlehot" | "hot" => WorkloadKind::SingleHot,
            "zipf" => WorkloadKind::Zipf(1.0),
            _ => match lower.strip_prefix("zipf:") {
                Some(x) => WorkloadKind::Zipf(
                    x.parse().map_err(|_| OramError::Config(format!("bad zipf exponent {x:?}")))?,
                ),
                None => return Err(OramError::Config(format!("unknown workload {s:?}"))),
            },
        })
    }
}

impl fmt::Display for WorkloadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WorkloadKind::RoundRobin => f.write_str("round-robin"),
            WorkloadKind::Uniform => f.write_str("uniform"),
            WorkloadKind::Zipf(s) => write!(f, "zipf:{s}"),
            WorkloadKind::SingleHot => f.write_str("single-hot"),
        }
    }
}

/// A deterministic request sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct Workload {
    pub kind: WorkloadKind,
    /// Number of requests M.
    pub ops: u64,
    /// Fraction of requests that are writes.
    pub write_ratio: f64,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Request {
    pub id: u64,
    pub write: bool,
}

impl Workload {
    pub fn new(kind: WorkloadKind, ops: u64) -> Workload {
        Workload { kind, ops, write_ratio: 0.5, seed: 0 }
    }

    pub fn write_ratio(mut self, r: f64) -> Workload {
        self.write_ratio = r;
        self
    }

    pub fn seed(mut self, seed: u64) -> Workload {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.ops == 0 {
            return Err(OramError::Config("a workload needs at least one request".into()));
        }
        if !(0.0..=1.0).contains(&self.write_ratio) {
            return Err(OramError::Config(format!("write ratio {} outside [0, 1]", self.write_ratio)));
        }
        if let WorkloadKind::Zipf(s) = self.kind {
            if !(s > 0.0) {
                return Err(OramError::Config("zipf exponent must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn requests(&self, n: u64) -> Result<impl Iterator<Item = Request>> {
        self.validate()?;
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        let zipf = match self.kind {
            WorkloadKind::Zipf(s) => Some(Zipf::new(n, s).map_err(|e| OramError::Config(e.to_string()))?),
            _ => None,
        };
        let (kind, ratio) = (self.kind, self.write_ratio);
        Ok((0..self.ops).map(move |i| {
            let id = match kind {
                WorkloadKind::RoundRobin => i % n,
                WorkloadKind::Uniform => rng.gen_range(0..n),
                WorkloadKind::Zipf(_) => (zipf.as_ref().unwrap().sample(&mut rng) as u64 - 1).min(n - 1),
                WorkloadKind::SingleHot => 0,
            };
            Request { id, write: rng.gen_bool(ratio) }
        }))
    }
}

/// Payload written by request `op`: recognisable and different for every request.
pub fn payload_for(op: u64, len: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(len);
    let mut x = op.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ 0x5bd1_e995;
    while out.len() < len {
        x ^= x >> 29;
        x = x.wrapping_mul(0xbf58_476d_1ce4_e5b9);
        out.extend_from_slice(&x.to_le_bytes()[..(len - out.len()).min(8)]);
    }
    out
}
