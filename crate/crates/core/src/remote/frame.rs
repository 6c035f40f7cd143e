//! Frame layout: `length u32 ‖ opcode u8 ‖ body`, where `length` counts the
//! body only. Every integer is big-endian.

use std::io::{Read, Write};

use crate::blockstore::{BlockRequest, LevelRef, LevelUpload, StoreLayout, TransferStats, UploadChunk};
use crate::crypto::CipherBlock;
use crate::StoreError;

pub const VERSION: u8 = 1;

pub const FETCH_BLOCKS: u8 = 0x01;
pub const STORE_LEVEL: u8 = 0x02;
pub const FETCH_META: u8 = 0x03;
pub const MARK_UNFILLED: u8 = 0x04;
pub const STATS: u8 = 0x05;
pub const SETUP: u8 = 0x06;
pub const REPLY: u8 = 0x80;
pub const ERROR: u8 = 0xff;

pub const ERR_MALFORMED: u8 = 1;
pub const ERR_PROTOCOL: u8 = 2;
pub const ERR_VERSION: u8 = 3;
pub const ERR_IO: u8 = 4;

/// Largest body accepted from the wire.
pub const MAX_BODY: u32 = 1 << 30;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub op: u8,
    pub body: Vec<u8>,
}

impl Frame {
    pub fn new(op: u8, body: Vec<u8>) -> Frame {
        Frame { op, body }
    }

    /// Bytes on the wire.
    pub fn wire_len(&self) -> usize {
        5 + self.body.len()
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        let mut head = [0u8; 5];
        head[..4].copy_from_slice(&(self.body.len() as u32).to_be_bytes());
        head[4] = self.op;
        w.write_all(&head)?;
        w.write_all(&self.body)?;
        w.flush()
    }

    /// Reads one frame; `Ok(None)` on a clean end of stream.
    pub fn read_from(r: &mut impl Read) -> std::io::Result<Option<Frame>> {
        let mut head = [0u8; 5];
        let mut got = 0;
        while got < head.len() {
            let n = r.read(&mut head[got..])?;
            if n == 0 {
                return if got == 0 {
                    Ok(None)
                } else {
                    Err(std::io::Error::new(std::io::ErrorKind::UnexpectedEof, "truncated frame header"))
                };
            }
            got += n;
        }
        let len = u32::from_be_bytes(head[..4].try_into().unwrap());
        if len > MAX_BODY {
            return Err(std::io::Error::new(std::io::ErrorKind::InvalidData, format!("frame of {len} bytes")));
        }
        let mut body = vec![0u8; len as usize];
        r.read_exact(&mut body)?;
        Ok(Some(Frame { op: head[4], body }))
    }

    pub fn error(e: &StoreError) -> Frame {
        let (code, msg) = match e {
            StoreError::Malformed(m) => (ERR_MALFORMED, m.clone()),
            StoreError::Protocol(m) => (ERR_PROTOCOL, m.clone()),
            StoreError::Version { client, server } => (ERR_VERSION, format!("{client} {server}")),
            StoreError::Io(m) | StoreError::Transport(m) => (ERR_IO, m.clone()),
        };
        let mut w = Writer::default();
        w.u8(code);
        w.bytes(msg.as_bytes());
        Frame::new(ERROR, w.0)
    }

    pub fn decode_error(&self) -> StoreError {
        let mut r = Reader::new(&self.body);
        let parsed = (|| {
            let code = r.u8()?;
            let msg = String::from_utf8_lossy(r.bytes()?).into_owned();
            Ok::<_, StoreError>((code, msg))
        })();
        match parsed {
            Ok((ERR_MALFORMED, m)) => StoreError::Malformed(m),
            Ok((ERR_PROTOCOL, m)) => StoreError::Protocol(m),
            Ok((ERR_VERSION, m)) => {
                let mut it = m.split(' ').map(|x| x.parse().unwrap_or(0));
                StoreError::Version { client: it.next().unwrap_or(0), server: it.next().unwrap_or(0) }
            }
            Ok((_, m)) => StoreError::Io(m),
            Err(e) => e,
        }
    }
}

#[derive(Default)]
pub struct Writer(pub Vec<u8>);

impl Writer {
    pub fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    pub fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }
    pub fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }
    /// Length-prefixed byte string.
    pub fn bytes(&mut self, b: &[u8]) {
        self.u32(b.len() as u32);
        self.0.extend_from_slice(b);
    }
    pub fn level(&mut self, r: &LevelRef) {
        self.u32(r.partition);
        self.u8(r.level);
        self.u64(r.epoch);
    }
}

pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

fn short() -> StoreError {
    StoreError::Malformed("frame body too short".into())
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8], StoreError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(short)?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    pub fn u8(&mut self) -> Result<u8, StoreError> {
        Ok(self.take(1)?[0])
    }
    pub fn u32(&mut self) -> Result<u32, StoreError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }
    pub fn u64(&mut self) -> Result<u64, StoreError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }
    pub fn bytes(&mut self) -> Result<&'a [u8], StoreError> {
        let n = self.u32()? as usize;
        self.take(n)
    }
    pub fn level(&mut self) -> Result<LevelRef, StoreError> {
        Ok(LevelRef { partition: self.u32()?, level: self.u8()?, epoch: self.u64()? })
    }
    /// Element count, refusing counts that cannot fit in the rest of the body.
    pub fn count(&mut self, min_item: usize) -> Result<usize, StoreError> {
        let n = self.u32()? as usize;
        if n.saturating_mul(min_item) > self.buf.len() - self.pos {
            return Err(StoreError::Malformed(format!("{n} items do not fit the frame")));
        }
        Ok(n)
    }
    pub fn finish(&self) -> Result<(), StoreError> {
        if self.pos != self.buf.len() {
            return Err(StoreError::Malformed(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

pub fn encode_setup(layout: &StoreLayout, version: u8) -> Vec<u8> {
    let mut w = Writer::default();
    w.u8(version);
    w.u32(layout.partitions);
    w.u8(layout.level_sizes.len() as u8);
    for &s in &layout.level_sizes {
        w.u32(s);
    }
    w.u32(layout.block_len);
    w.u32(layout.accounted_len);
    w.u8(layout.delete_on_read as u8);
    for &f in &layout.initial_fill {
        w.u64(f);
    }
    w.0
}

/// Returns the client's protocol version and the layout.
pub fn decode_setup(body: &[u8]) -> Result<(u8, StoreLayout), StoreError> {
    let mut r = Reader::new(body);
    let version = r.u8()?;
    if version != VERSION {
        return Ok((version, placeholder_layout()));
    }
    let partitions = r.u32()?;
    let levels = r.u8()?;
    let level_sizes = (0..levels).map(|_| r.u32()).collect::<Result<_, _>>()?;
    let block_len = r.u32()?;
    let accounted_len = r.u32()?;
    let delete_on_read = r.u8()? != 0;
    if (partitions as usize).saturating_mul(8) > body.len() {
        return Err(StoreError::Malformed("partition count exceeds the frame".into()));
    }
    let initial_fill = (0..partitions).map(|_| r.u64()).collect::<Result<_, _>>()?;
    r.finish()?;
    Ok((version, StoreLayout { partitions, level_sizes, block_len, accounted_len, delete_on_read, initial_fill }))
}

fn placeholder_layout() -> StoreLayout {
    StoreLayout {
        partitions: 0,
        level_sizes: Vec::new(),
        block_len: 0,
        accounted_len: 0,
        delete_on_read: false,
        initial_fill: Vec::new(),
    }
}

pub fn encode_requests(reqs: &[BlockRequest]) -> Vec<u8> {
    let mut w = Writer::default();
    w.u32(reqs.len() as u32);
    for r in reqs {
        w.level(&r.level);
        w.u32(r.offset);
    }
    w.0
}

pub fn decode_requests(body: &[u8]) -> Result<Vec<BlockRequest>, StoreError> {
    let mut r = Reader::new(body);
    let n = r.count(17)?;
    let reqs = (0..n)
        .map(|_| Ok(BlockRequest { level: r.level()?, offset: r.u32()? }))
        .collect::<Result<_, StoreError>>()?;
    r.finish()?;
    Ok(reqs)
}

pub fn encode_blocks(blocks: &[CipherBlock]) -> Vec<u8> {
    let mut w = Writer::default();
    w.u32(blocks.len() as u32);
    for b in blocks {
        w.bytes(b.as_bytes());
    }
    w.0
}

pub fn decode_blocks(body: &[u8]) -> Result<Vec<CipherBlock>, StoreError> {
    let mut r = Reader::new(body);
    let n = r.count(4)?;
    let blocks = (0..n).map(|_| Ok(CipherBlock(r.bytes()?.to_vec()))).collect::<Result<_, StoreError>>()?;
    r.finish()?;
    Ok(blocks)
}

const CHUNK_PLAIN: u8 = 0;
const CHUNK_ROWS: u8 = 1;
const CHUNK_NOMINAL: u8 = 2;

pub fn encode_upload(u: &LevelUpload) -> Vec<u8> {
    let mut w = Writer::default();
    w.level(&u.level);
    w.u32(u.offset);
    w.u32(u.total);
    match &u.chunk {
        UploadChunk::Plain(blocks) => {
            w.u8(CHUNK_PLAIN);
            w.u32(blocks.len() as u32);
            blocks.iter().for_each(|b| w.bytes(b.as_bytes()));
        }
        UploadChunk::Vandermonde(rows) => {
            w.u8(CHUNK_ROWS);
            w.u32(rows.len() as u32);
            for row in rows {
                w.u32(row.len() as u32);
                row.iter().for_each(|&x| w.u64(x));
            }
        }
        UploadChunk::Nominal { blocks, accounted } => {
            w.u8(CHUNK_NOMINAL);
            w.u32(*accounted);
            w.u32(blocks.len() as u32);
            blocks.iter().for_each(|b| w.bytes(b.as_bytes()));
        }
    }
    match &u.meta {
        Some(m) => {
            w.u8(1);
            w.bytes(m);
        }
        None => w.u8(0),
    }
    w.0
}

pub fn decode_upload(body: &[u8]) -> Result<LevelUpload, StoreError> {
    let mut r = Reader::new(body);
    let level = r.level()?;
    let offset = r.u32()?;
    let total = r.u32()?;
    let blocks = |r: &mut Reader| -> Result<Vec<CipherBlock>, StoreError> {
        let n = r.count(4)?;
        (0..n).map(|_| Ok(CipherBlock(r.bytes()?.to_vec()))).collect()
    };
    let chunk = match r.u8()? {
        CHUNK_PLAIN => UploadChunk::Plain(blocks(&mut r)?),
        CHUNK_ROWS => {
            let n = r.count(4)?;
            let rows = (0..n)
                .map(|_| {
                    let cols = r.count(8)?;
                    (0..cols).map(|_| r.u64()).collect::<Result<Vec<u64>, _>>()
                })
                .collect::<Result<_, _>>()?;
            UploadChunk::Vandermonde(rows)
        }
        CHUNK_NOMINAL => {
            let accounted = r.u32()?;
            UploadChunk::Nominal { blocks: blocks(&mut r)?, accounted }
        }
        k => return Err(StoreError::Malformed(format!("unknown chunk kind {k}"))),
    };
    let meta = match r.u8()? {
        0 => None,
        1 => Some(r.bytes()?.to_vec()),
        f => return Err(StoreError::Malformed(format!("bad metadata flag {f}"))),
    };
    r.finish()?;
    Ok(LevelUpload { level, offset, total, chunk, meta })
}

pub fn encode_level(level: &LevelRef) -> Vec<u8> {
    let mut w = Writer::default();
    w.level(level);
    w.0
}

pub fn decode_level(body: &[u8]) -> Result<LevelRef, StoreError> {
    let mut r = Reader::new(body);
    let l = r.level()?;
    r.finish()?;
    Ok(l)
}

pub fn encode_stats(s: &TransferStats) -> Vec<u8> {
    let mut w = Writer::default();
    for v in [s.blocks_up, s.blocks_down, s.bytes_up, s.bytes_down, s.meta_bytes, s.resident_blocks, s.peak_server_blocks] {
        w.u64(v);
    }
    w.u32(s.per_step_work.len() as u32);
    s.per_step_work.iter().for_each(|&v| w.u64(v));
    w.0
}

pub fn decode_stats(body: &[u8]) -> Result<TransferStats, StoreError> {
    let mut r = Reader::new(body);
    let mut s = TransferStats {
        blocks_up: r.u64()?,
        blocks_down: r.u64()?,
        bytes_up: r.u64()?,
        bytes_down: r.u64()?,
        meta_bytes: r.u64()?,
        resident_blocks: r.u64()?,
        peak_server_blocks: r.u64()?,
        per_step_work: Vec::new(),
    };
    let n = r.count(8)?;
    s.per_step_work = (0..n).map(|_| r.u64()).collect::<Result<_, _>>()?;
    r.finish()?;
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lr() -> LevelRef {
        LevelRef { partition: 3, level: 2, epoch: 9 }
    }

    #[test]
    fn header_is_big_endian() {
        let mut buf = Vec::new();
        Frame::new(STATS, vec![1, 2, 3]).write_to(&mut buf).unwrap();
        assert_eq!(buf, vec![0, 0, 0, 3, 0x05, 1, 2, 3]);
        let f = Frame::read_from(&mut buf.as_slice()).unwrap().unwrap();
        assert_eq!(f, Frame::new(STATS, vec![1, 2, 3]));
        assert!(Frame::read_from(&mut [].as_slice()).unwrap().is_none());
        assert!(Frame::read_from(&mut [0u8, 0].as_slice()).is_err());
    }

    #[test]
    fn level_ref_layout() {
        assert_eq!(encode_level(&lr()), vec![0, 0, 0, 3, 2, 0, 0, 0, 0, 0, 0, 0, 9]);
    }

    #[test]
    fn round_trips() {
        let reqs = vec![BlockRequest { level: lr(), offset: 7 }, BlockRequest { level: lr(), offset: 1 }];
        assert_eq!(decode_requests(&encode_requests(&reqs)).unwrap(), reqs);
        let blocks = vec![CipherBlock(vec![1, 2]), CipherBlock(vec![])];
        assert_eq!(decode_blocks(&encode_blocks(&blocks)).unwrap(), blocks);
        for chunk in [
            UploadChunk::Plain(blocks.clone()),
            UploadChunk::Vandermonde(vec![vec![1, 2], vec![u64::MAX, 0]]),
            UploadChunk::Nominal { blocks: blocks.clone(), accounted: 1 },
        ] {
            let u = LevelUpload { level: lr(), offset: 2, total: 8, chunk, meta: Some(vec![5; 3]) };
            assert_eq!(decode_upload(&encode_upload(&u)).unwrap(), u);
        }
        let s = TransferStats { blocks_up: 1, bytes_down: 9, per_step_work: vec![3, 4], ..Default::default() };
        assert_eq!(decode_stats(&encode_stats(&s)).unwrap(), s);
        let layout = StoreLayout {
            partitions: 2,
            level_sizes: vec![2, 4, 20],
            block_len: 44,
            accounted_len: 100,
            delete_on_read: true,
            initial_fill: vec![4, 6],
        };
        assert_eq!(decode_setup(&encode_setup(&layout, VERSION)).unwrap(), (VERSION, layout));
    }

    #[test]
    fn errors_round_trip() {
        for e in [
            StoreError::Malformed("x".into()),
            StoreError::Protocol("unfilled".into()),
            StoreError::Version { client: 9, server: 1 },
            StoreError::Io("disk".into()),
        ] {
            let f = Frame::error(&e);
            assert_eq!(f.op, ERROR);
            assert_eq!(f.decode_error(), e);
        }
        assert_eq!(Frame::error(&StoreError::Protocol("p".into())).body[0], 2);
    }

    #[test]
    fn garbage_is_malformed() {
        assert!(matches!(decode_requests(&[0, 0, 0, 9]), Err(StoreError::Malformed(_))));
        assert!(matches!(decode_upload(&[1, 2, 3]), Err(StoreError::Malformed(_))));
        assert!(matches!(decode_level(&[0; 14]), Err(StoreError::Malformed(_))));
    }
}
