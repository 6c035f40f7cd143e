//! Upload compression: a level of `2k` sealed blocks whose first `k` buffer
//! positions must hold exact bytes is sent as `k` rows `x` with `M·x = y`,
//! where `M[j][i] = (j+1)^i` over GF(2^61 − 1). The server expands `y`.

use crate::{OramError, Result};

pub const MODULUS: u64 = (1 << 61) - 1;
/// Payload bytes packed into one field element.
pub const BYTES_PER_ELEMENT: usize = 7;

#[inline]
fn reduce(x: u128) -> u64 {
    let lo = (x as u64) & MODULUS;
    let hi = (x >> 61) as u64;
    let s = lo + (hi & MODULUS) + ((x >> 122) as u64);
    let s = (s & MODULUS) + (s >> 61);
    if s >= MODULUS {
        s - MODULUS
    } else {
        s
    }
}

#[inline]
pub fn mul(a: u64, b: u64) -> u64 {
    reduce(a as u128 * b as u128)
}

#[inline]
pub fn add(a: u64, b: u64) -> u64 {
    let s = a + b;
    if s >= MODULUS {
        s - MODULUS
    } else {
        s
    }
}

#[inline]
pub fn sub(a: u64, b: u64) -> u64 {
    if a >= b {
        a - b
    } else {
        a + MODULUS - b
    }
}

pub fn pow(mut base: u64, mut exp: u64) -> u64 {
    let mut acc = 1;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = mul(acc, base);
        }
        base = mul(base, base);
        exp >>= 1;
    }
    acc
}

pub fn inv(a: u64) -> u64 {
    debug_assert!(a != 0);
    pow(a, MODULUS - 2)
}

pub fn elements_for(len: usize) -> usize {
    len.div_ceil(BYTES_PER_ELEMENT)
}

pub fn pack(bytes: &[u8]) -> Vec<u64> {
    bytes
        .chunks(BYTES_PER_ELEMENT)
        .map(|c| {
            let mut w = [0u8; 8];
            w[..c.len()].copy_from_slice(c);
            u64::from_le_bytes(w)
        })
        .collect()
}

/// Inverse of [`pack`] for exact rows; unconstrained rows are truncated.
pub fn unpack(elems: &[u64], len: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(elems.len() * BYTES_PER_ELEMENT);
    for e in elems {
        out.extend_from_slice(&e.to_le_bytes()[..BYTES_PER_ELEMENT]);
    }
    out.resize(len, 0);
    out
}

/// Solves `M_S · x = b_S` for the `k = real_positions.len()` constrained rows.
///
/// `blocks` holds the `2k` packed rows of the level; only the constrained
/// ones are read.
pub fn compress_upload(blocks: &[Vec<u64>], real_positions: &[usize]) -> Result<Vec<Vec<u64>>> {
    let k = real_positions.len();
    if blocks.len() != 2 * k {
        return Err(OramError::Domain(format!("{} rows for {} constrained positions", blocks.len(), k)));
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let cols = blocks[0].len();
    let mut seen = vec![false; 2 * k];
    for &p in real_positions {
        if p >= 2 * k || std::mem::replace(&mut seen[p], true) {
            return Err(OramError::Domain(format!("bad constrained position {p}")));
        }
    }
    // Augmented system [A | B], A[a][i] = (pos_a + 1)^i.
    let mut a: Vec<Vec<u64>> = real_positions
        .iter()
        .map(|&p| {
            let node = p as u64 + 1;
            let mut row = Vec::with_capacity(k);
            let mut v = 1;
            for _ in 0..k {
                row.push(v);
                v = mul(v, node);
            }
            row
        })
        .collect();
    let mut b: Vec<Vec<u64>> = real_positions.iter().map(|&p| blocks[p].clone()).collect();
    for col in 0..k {
        let pivot = (col..k)
            .find(|&r| a[r][col] != 0)
            .ok_or_else(|| OramError::Invariant("singular Vandermonde subsystem".into()))?;
        a.swap(col, pivot);
        b.swap(col, pivot);
        let f = inv(a[col][col]);
        for v in a[col][col..].iter_mut() {
            *v = mul(*v, f);
        }
        for v in b[col].iter_mut() {
            *v = mul(*v, f);
        }
        let (prow_a, prow_b) = (a[col].clone(), b[col].clone());
        for r in 0..k {
            if r == col || a[r][col] == 0 {
                continue;
            }
            let m = a[r][col];
            for c in col..k {
                a[r][c] = sub(a[r][c], mul(m, prow_a[c]));
            }
            for c in 0..cols {
                b[r][c] = sub(b[r][c], mul(m, prow_b[c]));
            }
        }
    }
    Ok(b)
}

/// Recomputes all `total` rows `y = M·x` from the compressed rows alone.
pub fn decompress_upload(x: &[Vec<u64>], total: usize) -> Vec<Vec<u64>> {
    let cols = x.first().map_or(0, |r| r.len());
    let mut acc = Accumulator::new(total, cols);
    for row in x {
        acc.absorb(row);
    }
    acc.finish()
}

/// Server side of the codec: absorbs rows of `x` in order.
pub struct Accumulator {
    y: Vec<Vec<u64>>,
    powers: Vec<u64>,
    rows_seen: usize,
}

impl Accumulator {
    pub fn new(total: usize, cols: usize) -> Accumulator {
        Accumulator { y: vec![vec![0; cols]; total], powers: vec![1; total], rows_seen: 0 }
    }

    pub fn rows_seen(&self) -> usize {
        self.rows_seen
    }

    pub fn absorb(&mut self, row: &[u64]) {
        for (j, (yj, pw)) in self.y.iter_mut().zip(self.powers.iter_mut()).enumerate() {
            let coeff = *pw;
            for (acc, &v) in yj.iter_mut().zip(row) {
                *acc = add(*acc, mul(coeff, v));
            }
            *pw = mul(coeff, j as u64 + 1);
        }
        self.rows_seen += 1;
    }

    pub fn finish(self) -> Vec<Vec<u64>> {
        self.y
    }
}
