use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Seed of an `output_len × input_len` Toeplitz matrix: `n + m - 1` bits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaSeed {
    pub bits: Vec<u8>,
    pub output_len: usize,
    pub input_len: usize,
}

impl PaSeed {
    pub fn new(bits: Vec<u8>, input_len: usize, output_len: usize) -> Result<PaSeed> {
        let seed = PaSeed { bits, output_len, input_len };
        seed.validate()?;
        Ok(seed)
    }

    pub fn random<R: Rng + ?Sized>(input_len: usize, output_len: usize, rng: &mut R) -> Result<PaSeed> {
        let len = Self::seed_len(input_len, output_len)?;
        let bits = (0..len).map(|_| u8::from(rng.gen::<bool>())).collect();
        Ok(PaSeed { bits, output_len, input_len })
    }

    fn seed_len(n: usize, m: usize) -> Result<usize> {
        if m > n {
            return Err(Error::LengthMismatch { expected: n, actual: m });
        }
        Ok((n + m).saturating_sub(1))
    }

    pub fn validate(&self) -> Result<()> {
        let len = Self::seed_len(self.input_len, self.output_len)?;
        if self.bits.len() != len {
            return Err(Error::LengthMismatch { expected: len, actual: self.bits.len() });
        }
        Ok(())
    }
}

fn pack(bits: impl ExactSizeIterator<Item = u8>) -> Vec<u64> {
    let mut words = vec![0u64; bits.len().div_ceil(64)];
    for (i, b) in bits.enumerate() {
        words[i / 64] |= u64::from(b & 1) << (i % 64);
    }
    words
}

/// 64 seed bits starting at bit `offset`.
fn window(words: &[u64], offset: usize) -> u64 {
    let (w, s) = (offset / 64, offset % 64);
    let lo = words.get(w).copied().unwrap_or(0) >> s;
    if s == 0 {
        lo
    } else {
        lo | (words.get(w + 1).copied().unwrap_or(0) << (64 - s))
    }
}

/// `out[i] = XOR_j T[i][j]·key[j]` with `T[i][j] = seed[i - j + n - 1]`.
///
/// Substituting `k = n - 1 - j` turns row `i` into the inner product of
/// `seed[i .. i + n]` with the reversed key, which is evaluated 64 bits at a time.
pub fn toeplitz_hash(key: &[u8], seed: &PaSeed) -> Result<Vec<u8>> {
    seed.validate()?;
    let n = key.len();
    if n != seed.input_len {
        return Err(Error::LengthMismatch { expected: seed.input_len, actual: n });
    }
    let reversed = pack(key.iter().rev().copied());
    let seed_words = pack(seed.bits.iter().copied());
    let tail_mask = match n % 64 {
        0 => u64::MAX,
        r => (1u64 << r) - 1,
    };
    let out = (0..seed.output_len)
        .map(|i| {
            let mut acc = 0u64;
            for (w, rk) in reversed.iter().enumerate() {
                let mut s = window(&seed_words, i + 64 * w);
                if w + 1 == reversed.len() {
                    s &= tail_mask;
                }
                acc ^= s & rk;
            }
            (acc.count_ones() & 1) as u8
        })
        .collect();
    Ok(out)
}
