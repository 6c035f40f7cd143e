//! Level keys, the small-domain PRP, the PRF and block sealing.

mod prf;
mod prp;
mod seal;

use std::fmt;

use aes::cipher::{BlockEncrypt, KeyInit};
use aes::Aes128;
use rand::RngCore;

pub use prf::Prf;
pub use prp::Prp;
pub use seal::{CipherBlock, LevelCipher, NONCE_LEN, SEAL_OVERHEAD, TAG_LEN};

/// 128-bit key of one level construction.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct LevelKey([u8; 16]);

impl LevelKey {
    pub fn from_bytes(bytes: [u8; 16]) -> Self {
        LevelKey(bytes)
    }

    pub fn random<R: RngCore + ?Sized>(rng: &mut R) -> Self {
        let mut k = [0u8; 16];
        rng.fill_bytes(&mut k);
        LevelKey(k)
    }

    pub fn as_bytes(&self) -> &[u8; 16] {
        &self.0
    }

    /// Independent subkey for one purpose (PRP, encryption, checksum).
    pub(crate) fn derive(&self, purpose: u8) -> [u8; 16] {
        let cipher = Aes128::new(&self.0.into());
        let mut block = [0u8; 16];
        block[0] = purpose;
        block[15] = 0x5a;
        let mut b = block.into();
        cipher.encrypt_block(&mut b);
        b.into()
    }
}

impl fmt::Debug for LevelKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("LevelKey(..)")
    }
}

pub(crate) const PURPOSE_PRP: u8 = 1;
pub(crate) const PURPOSE_AEAD: u8 = 2;
pub(crate) const PURPOSE_CHECKSUM: u8 = 3;
