use aes::cipher::{BlockEncrypt, KeyInit};
use aes::Aes128;

use super::{LevelKey, PURPOSE_PRP};
use crate::{OramError, Result};

const ROUNDS: u8 = 4;

/// Keyed permutation of `[0, d)`.
///
/// A 4-round Feistel network over `⌈log₂ d⌉` bits (unbalanced when the bit
/// count is odd) with AES as round function. Values that land outside the
/// domain are walked along their cycle until they fall back inside.
#[derive(Clone)]
pub struct Prp {
    cipher: Aes128,
    domain: u64,
    left_bits: u32,
    right_bits: u32,
}

impl Prp {
    pub fn new(key: &LevelKey, domain: u64) -> Result<Prp> {
        if domain == 0 {
            return Err(OramError::Domain("PRP domain must be positive".into()));
        }
        let bits = 64 - (domain - 1).leading_zeros();
        Ok(Prp {
            cipher: Aes128::new(&key.derive(PURPOSE_PRP).into()),
            domain,
            left_bits: bits.div_ceil(2),
            right_bits: bits / 2,
        })
    }

    pub fn domain(&self) -> u64 {
        self.domain
    }

    pub fn apply(&self, i: u64) -> Result<u64> {
        self.check(i)?;
        Ok(self.walk(i, |x| self.forward(x)))
    }

    pub fn invert(&self, i: u64) -> Result<u64> {
        self.check(i)?;
        Ok(self.walk(i, |x| self.backward(x)))
    }

    fn check(&self, i: u64) -> Result<()> {
        if i >= self.domain {
            return Err(OramError::Domain(format!("PRP input {i} outside [0, {})", self.domain)));
        }
        Ok(())
    }

    fn walk(&self, i: u64, step: impl Fn(u64) -> u64) -> u64 {
        if self.domain == 1 {
            return 0;
        }
        let mut x = step(i);
        while x >= self.domain {
            x = step(x);
        }
        x
    }

    fn round(&self, round: u8, half: u64) -> u64 {
        let mut block = [0u8; 16];
        block[0] = round;
        block[1] = self.left_bits as u8;
        block[2] = self.right_bits as u8;
        block[8..].copy_from_slice(&half.to_le_bytes());
        let mut b = block.into();
        self.cipher.encrypt_block(&mut b);
        let out: [u8; 16] = b.into();
        u64::from_le_bytes(out[..8].try_into().unwrap())
    }

    fn masks(&self) -> (u64, u64) {
        ((1u64 << self.left_bits) - 1, (1u64 << self.right_bits) - 1)
    }

    fn forward(&self, x: u64) -> u64 {
        let (lmask, rmask) = self.masks();
        let (mut l, mut r) = (x >> self.right_bits, x & rmask);
        for round in 0..ROUNDS {
            if round % 2 == 0 {
                l ^= self.round(round, r) & lmask;
            } else {
                r ^= self.round(round, l) & rmask;
            }
        }
        (l << self.right_bits) | r
    }

    fn backward(&self, x: u64) -> u64 {
        let (lmask, rmask) = self.masks();
        let (mut l, mut r) = (x >> self.right_bits, x & rmask);
        for round in (0..ROUNDS).rev() {
            if round % 2 == 0 {
                l ^= self.round(round, r) & lmask;
            } else {
                r ^= self.round(round, l) & rmask;
            }
        }
        (l << self.right_bits) | r
    }
}
