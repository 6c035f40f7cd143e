use aes_gcm::aead::{Aead, Payload};
use aes_gcm::{Aes128Gcm, KeyInit, Nonce};
use rand::RngCore;

use super::{LevelKey, PURPOSE_AEAD, PURPOSE_CHECKSUM};
use crate::config::CipherSuite;
use crate::posmap::{Block, BlockId};
use crate::{OramError, Result};

pub const NONCE_LEN: usize = 12;
pub const TAG_LEN: usize = 16;
const ID_LEN: usize = 8;
/// Bytes a sealed block adds on top of its payload.
pub const SEAL_OVERHEAD: usize = NONCE_LEN + ID_LEN + TAG_LEN;

/// Wire form of a sealed block: `nonce ‖ ciphertext(id ‖ payload) ‖ tag`.
#[derive(Clone, PartialEq, Eq)]
pub struct CipherBlock(pub Vec<u8>);

impl CipherBlock {
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl std::fmt::Debug for CipherBlock {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "CipherBlock({} bytes)", self.0.len())
    }
}

/// Encryption state of one level construction.
pub struct LevelCipher {
    inner: Inner,
}

enum Inner {
    Aead(Box<Aes128Gcm>),
    Sim([u8; 16]),
}

impl LevelCipher {
    pub fn new(suite: CipherSuite, key: &LevelKey) -> LevelCipher {
        let inner = match suite {
            CipherSuite::Aead => {
                let k = key.derive(PURPOSE_AEAD);
                Inner::Aead(Box::new(Aes128Gcm::new(&k.into())))
            }
            CipherSuite::Sim => Inner::Sim(key.derive(PURPOSE_CHECKSUM)),
        };
        LevelCipher { inner }
    }

    /// Seals arbitrary bytes bound to `index`.
    pub fn seal_bytes<R: RngCore + ?Sized>(&self, rng: &mut R, index: u64, plaintext: &[u8]) -> Vec<u8> {
        let mut nonce = [0u8; NONCE_LEN];
        rng.fill_bytes(&mut nonce);
        let mut out = Vec::with_capacity(NONCE_LEN + plaintext.len() + TAG_LEN);
        out.extend_from_slice(&nonce);
        match &self.inner {
            Inner::Aead(aead) => {
                let aad = index.to_be_bytes();
                let ct = aead
                    .encrypt(Nonce::from_slice(&nonce), Payload { msg: plaintext, aad: &aad })
                    .expect("AES-GCM encryption cannot fail for in-range lengths");
                out.extend_from_slice(&ct);
            }
            Inner::Sim(key) => {
                out.extend_from_slice(plaintext);
                let tag = checksum(key, index, &nonce, plaintext);
                out.extend_from_slice(&tag);
            }
        }
        out
    }

    pub fn open_bytes(&self, index: u64, sealed: &[u8]) -> Result<Vec<u8>> {
        if sealed.len() < NONCE_LEN + TAG_LEN {
            return Err(OramError::Integrity(format!("sealed object of {} bytes is truncated", sealed.len())));
        }
        let (nonce, rest) = sealed.split_at(NONCE_LEN);
        match &self.inner {
            Inner::Aead(aead) => {
                let aad = index.to_be_bytes();
                aead.decrypt(Nonce::from_slice(nonce), Payload { msg: rest, aad: &aad })
                    .map_err(|_| OramError::Integrity(format!("authentication failed at index {index}")))
            }
            Inner::Sim(key) => {
                let (ct, tag) = rest.split_at(rest.len() - TAG_LEN);
                if checksum(key, index, nonce, ct) != tag {
                    return Err(OramError::Integrity(format!("checksum mismatch at index {index}")));
                }
                Ok(ct.to_vec())
            }
        }
    }

    pub fn seal<R: RngCore + ?Sized>(&self, rng: &mut R, index: u64, block: &Block) -> CipherBlock {
        let mut pt = Vec::with_capacity(ID_LEN + block.payload.len());
        pt.extend_from_slice(&block.id.encode().to_le_bytes());
        pt.extend_from_slice(&block.payload);
        CipherBlock(self.seal_bytes(rng, index, &pt))
    }

    pub fn open(&self, index: u64, cb: &CipherBlock) -> Result<Block> {
        let pt = self.open_bytes(index, &cb.0)?;
        if pt.len() < ID_LEN {
            return Err(OramError::Integrity("sealed block too short".into()));
        }
        let id = BlockId::decode(u64::from_le_bytes(pt[..ID_LEN].try_into().unwrap()));
        Ok(Block { id, payload: pt[ID_LEN..].to_vec() })
    }
}

/// Keyed 128-bit checksum: two FNV-1a lanes with key-dependent offsets.
fn checksum(key: &[u8; 16], index: u64, nonce: &[u8], ct: &[u8]) -> [u8; 16] {
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut a = 0xcbf2_9ce4_8422_2325 ^ u64::from_le_bytes(key[..8].try_into().unwrap());
    let mut b = 0x6c62_272e_07bb_0142 ^ u64::from_le_bytes(key[8..].try_into().unwrap());
    let mut absorb = |bytes: &[u8]| {
        for &x in bytes {
            a = (a ^ x as u64).wrapping_mul(PRIME);
            b = (b ^ x as u64 ^ 0xa5).wrapping_mul(PRIME);
        }
    };
    absorb(&index.to_be_bytes());
    absorb(nonce);
    absorb(&(ct.len() as u32).to_be_bytes());
    absorb(ct);
    absorb(key);
    let mut out = [0u8; 16];
    out[..8].copy_from_slice(&a.to_le_bytes());
    out[8..].copy_from_slice(&b.to_le_bytes());
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn rng() -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(11)
    }

    fn both_suites() -> [CipherSuite; 2] {
        [CipherSuite::Aead, CipherSuite::Sim]
    }

    #[test]
    fn round_trip_and_size() {
        let mut r = rng();
        for suite in both_suites() {
            let c = LevelCipher::new(suite, &LevelKey::random(&mut r));
            let block = Block { id: BlockId::Real(42), payload: vec![7; 100] };
            let cb = c.seal(&mut r, 5, &block);
            assert_eq!(cb.len(), 100 + SEAL_OVERHEAD);
            assert_eq!(c.open(5, &cb).unwrap(), block);
            let dummy = Block::dummy(100);
            assert_eq!(c.open(9, &c.seal(&mut r, 9, &dummy)).unwrap(), dummy);
        }
    }

    #[test]
    fn sealing_is_randomized() {
        let mut r = rng();
        let c = LevelCipher::new(CipherSuite::Aead, &LevelKey::random(&mut r));
        let block = Block { id: BlockId::Real(1), payload: vec![0; 16] };
        let a = c.seal(&mut r, 0, &block);
        let b = c.seal(&mut r, 0, &block);
        assert_ne!(a, b);
        assert_eq!(c.open(0, &a).unwrap(), c.open(0, &b).unwrap());
    }

    #[test]
    fn tamper_index_and_key_detected() {
        let mut r = rng();
        for suite in both_suites() {
            let key = LevelKey::random(&mut r);
            let c = LevelCipher::new(suite, &key);
            let block = Block { id: BlockId::Real(3), payload: vec![1, 2, 3, 4] };
            let cb = c.seal(&mut r, 2, &block);
            for bit in 0..cb.len() * 8 {
                let mut bad = cb.clone();
                bad.0[bit / 8] ^= 1 << (bit % 8);
                assert!(c.open(2, &bad).unwrap_err().is_integrity(), "{suite:?} bit {bit}");
            }
            assert!(c.open(3, &cb).is_err());
            let other = LevelCipher::new(suite, &LevelKey::random(&mut r));
            assert!(other.open(2, &cb).is_err());
            assert!(c.open(2, &CipherBlock(cb.0[..20].to_vec())).is_err());
        }
    }

    #[test]
    fn bytes_round_trip() {
        let mut r = rng();
        let c = LevelCipher::new(CipherSuite::Sim, &LevelKey::random(&mut r));
        let sealed = c.seal_bytes(&mut r, u64::MAX, b"metadata list");
        assert_eq!(c.open_bytes(u64::MAX, &sealed).unwrap(), b"metadata list");
        assert!(c.open_bytes(0, &sealed).is_err());
    }
}
