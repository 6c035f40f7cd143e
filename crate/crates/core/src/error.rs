use thiserror::Error;

/// Failures of the storage contract, whether local or across the wire.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StoreError {
    /// The request violates the level state machine (unfilled level, stale epoch, bad offset).
    #[error("protocol error: {0}")]
    Protocol(String),
    /// A frame could not be parsed.
    #[error("malformed frame: {0}")]
    Malformed(String),
    #[error("protocol version mismatch: client {client}, server {server}")]
    Version { client: u8, server: u8 },
    #[error("i/o error: {0}")]
    Io(String),
    /// Connection-level failure; never confused with an integrity problem.
    #[error("transport error: {0}")]
    Transport(String),
}

impl From<std::io::Error> for StoreError {
    fn from(e: std::io::Error) -> Self {
        StoreError::Io(e.to_string())
    }
}

#[derive(Debug, Error)]
pub enum OramError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("integrity violation: {0}")]
    Integrity(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("partition {partition} over capacity: {reals} real blocks for capacity {capacity}")]
    Capacity { partition: u32, reals: u32, capacity: u32 },
    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

impl OramError {
    pub fn is_integrity(&self) -> bool {
        matches!(self, OramError::Integrity(_))
    }

    pub fn is_transport(&self) -> bool {
        matches!(self, OramError::Store(StoreError::Transport(_)))
    }
}
