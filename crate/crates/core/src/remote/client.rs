use std::io::{BufReader, BufWriter};
use std::net::{TcpStream, ToSocketAddrs};

use super::frame::*;
use crate::blockstore::{BlockRequest, BlockStore, LevelRef, LevelUpload, StoreLayout, StoreResult, TransferStats};
use crate::crypto::CipherBlock;
use crate::StoreError;

/// Opcode and wire size of one request frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SentFrame {
    pub op: u8,
    pub wire_len: usize,
}

/// Client side of the wire protocol; one request in flight at a time.
pub struct RemoteStore {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
    log: Option<Vec<SentFrame>>,
    version: u8,
}

fn transport(e: std::io::Error) -> StoreError {
    StoreError::Transport(e.to_string())
}

impl RemoteStore {
    pub fn connect(addr: impl ToSocketAddrs) -> StoreResult<RemoteStore> {
        let conn = TcpStream::connect(addr).map_err(transport)?;
        conn.set_nodelay(true).map_err(transport)?;
        Ok(RemoteStore {
            reader: BufReader::new(conn.try_clone().map_err(transport)?),
            writer: BufWriter::new(conn),
            log: None,
            version: VERSION,
        })
    }

    /// Starts recording every request frame sent.
    pub fn record_frames(&mut self) {
        self.log.get_or_insert_with(Vec::new);
    }

    pub fn take_frames(&mut self) -> Vec<SentFrame> {
        self.log.as_mut().map(std::mem::take).unwrap_or_default()
    }

    /// Protocol version announced in SETUP; for testing version checks.
    pub fn set_version(&mut self, v: u8) {
        self.version = v;
    }

    /// Sends one raw frame and returns the reply frame.
    pub fn round_trip(&mut self, req: Frame) -> StoreResult<Frame> {
        if let Some(log) = &mut self.log {
            log.push(SentFrame { op: req.op, wire_len: req.wire_len() });
        }
        req.write_to(&mut self.writer).map_err(transport)?;
        Frame::read_from(&mut self.reader)
            .map_err(transport)?
            .ok_or_else(|| StoreError::Transport("server closed the connection".into()))
    }

    fn call(&mut self, op: u8, body: Vec<u8>) -> StoreResult<Vec<u8>> {
        let reply = self.round_trip(Frame::new(op, body))?;
        match reply.op {
            ERROR => Err(reply.decode_error()),
            r if r == REPLY | op => Ok(reply.body),
            r => Err(StoreError::Malformed(format!("reply opcode {r:#04x} to request {op:#04x}"))),
        }
    }
}

impl BlockStore for RemoteStore {
    fn setup(&mut self, layout: &StoreLayout) -> StoreResult<()> {
        self.call(SETUP, encode_setup(layout, self.version)).map(drop)
    }

    fn fetch_blocks(&mut self, requests: &[BlockRequest]) -> StoreResult<Vec<CipherBlock>> {
        decode_blocks(&self.call(FETCH_BLOCKS, encode_requests(requests))?)
    }

    fn store_level(&mut self, upload: LevelUpload) -> StoreResult<()> {
        self.call(STORE_LEVEL, encode_upload(&upload)).map(drop)
    }

    fn fetch_meta(&mut self, level: LevelRef) -> StoreResult<Vec<u8>> {
        let body = self.call(FETCH_META, encode_level(&level))?;
        let mut r = Reader::new(&body);
        let meta = r.bytes()?.to_vec();
        r.finish()?;
        Ok(meta)
    }

    fn mark_unfilled(&mut self, level: LevelRef) -> StoreResult<()> {
        self.call(MARK_UNFILLED, encode_level(&level)).map(drop)
    }

    fn stats(&mut self) -> StoreResult<TransferStats> {
        decode_stats(&self.call(STATS, Vec::new())?)
    }
}
