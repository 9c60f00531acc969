/// Size of the disclosed verification tag.
pub const HASH_BITS: usize = 64;

/// Largest prime below 2^64.
const P: u128 = (1u128 << 64) - 59;

/// Keyed polynomial hash over GF(p), p = 2^64 - 59.
///
/// The key is packed into 64-bit words `w_1..w_k` (one bit per byte input,
/// little-endian bit order) and the hash is `Σ w_i x^(k+1-i) + len·x^0`
/// evaluated at the point derived from `hash_key`. Two different keys of equal
/// length collide with probability at most `k / p` over the choice of point.
pub fn polynomial_hash(key: &[u8], hash_key: u64) -> u64 {
    let x = (hash_key as u128 % (P - 2)) + 2;
    let mut acc: u128 = 0;
    for chunk in key.chunks(64) {
        let word = chunk.iter().enumerate().fold(0u64, |w, (i, b)| w | (u64::from(b & 1) << i));
        acc = (acc * x + word as u128 % P) % P;
    }
    acc = (acc * x + key.len() as u128 % P) % P;
    acc as u64
}
