use std::collections::HashMap;
use std::fmt;

use super::workload::{payload_for, Request, Workload};
use crate::config::OramConfig;
use crate::framework::Oram;
use crate::Result;

/// First request whose result differs from the reference dictionary.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Divergence {
    pub op: u64,
    pub id: u64,
    pub expected: Vec<u8>,
    /// What the ORAM returned, or the error it raised.
    pub got: std::result::Result<Vec<u8>, String>,
}

impl fmt::Display for Divergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.got {
            Ok(v) => write!(f, "op {} on block {}: expected {:02x?}, got {:02x?}", self.op, self.id, self.expected, v),
            Err(e) => write!(f, "op {} on block {}: {e}", self.op, self.id),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OracleReport {
    /// Requests replayed, up to and including a divergence.
    pub checked: u64,
    pub divergence: Option<Divergence>,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.divergence.is_none()
    }
}

pub fn run_oracle_check(cfg: &OramConfig, workload: &Workload) -> Result<OracleReport> {
    run_oracle_check_with_fault(cfg, workload, None)
}

/// Replays `workload` against the ORAM and a dictionary, comparing the
/// value every request returns (writes return the previous contents).
/// `fault_at` makes that access skip its position-map update.
pub fn run_oracle_check_with_fault(cfg: &OramConfig, workload: &Workload, fault_at: Option<u64>) -> Result<OracleReport> {
    run_oracle_sequence(cfg, workload.requests(cfg.n)?, fault_at)
}

/// Like [`run_oracle_check_with_fault`] over an arbitrary request sequence.
pub fn run_oracle_sequence(
    cfg: &OramConfig,
    requests: impl IntoIterator<Item = Request>,
    fault_at: Option<u64>,
) -> Result<OracleReport> {
    let mut oram = Oram::in_memory(cfg.clone())?;
    if let Some(at) = fault_at {
        oram.inject_skipped_position_update(at);
    }
    let len = oram.payload_len();
    let zero = vec![0u8; len];
    let mut reference: HashMap<u64, Vec<u8>> = HashMap::new();
    let mut checked = 0;
    for (i, req) in requests.into_iter().enumerate() {
        let op = i as u64;
        let expected = reference.get(&req.id).unwrap_or(&zero).clone();
        let got = if req.write {
            let data = payload_for(op, len);
            reference.insert(req.id, data.clone());
            oram.write(req.id, data)
        } else {
            oram.read(req.id)
        };
        checked += 1;
        let diverged = match &got {
            Ok(v) => *v != expected,
            Err(_) => true,
        };
        if diverged {
            return Ok(OracleReport {
                checked,
                divergence: Some(Divergence { op, id: req.id, expected, got: got.map_err(|e| e.to_string()) }),
            });
        }
    }
    Ok(OracleReport { checked, divergence: None })
}
