//! Deterministic random streams.
//!
//! All randomness in the crate flows through [`Pcg64`] (PCG XSL-RR 128/64,
//! the generator with the published 128-bit LCG multiplier), seeded from a
//! `(seed, key)` pair through SHA-256. Bounded draws and shuffles are written
//! out here rather than borrowed from `rand` so that a given seed produces
//! the same sequence in any implementation that follows the same recipe:
//!
//! * stream seeding: `digest = SHA-256(seed as u64 LE || key bytes)`,
//!   state = `digest[0..16]` as u128 LE, stream = `digest[16..32]` as u128 LE;
//! * bounded draw in `0..n`: `(next_u64() as u128 * n as u128) >> 64`;
//! * shuffle: Fisher-Yates from the last index down, `j = below(i + 1)`.

use rand_core::RngCore;
pub use rand_pcg::Pcg64;
use sha2::{Digest, Sha256};

/// Builds the generator for `(seed, key)`.
pub fn stream(seed: u64, key: &[u8]) -> Pcg64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(key);
    let digest = hasher.finalize();
    let mut state = [0u8; 16];
    let mut inc = [0u8; 16];
    state.copy_from_slice(&digest[..16]);
    inc.copy_from_slice(&digest[16..]);
    Pcg64::new(u128::from_le_bytes(state), u128::from_le_bytes(inc))
}

/// Generator for the `index`-th resample of a seeded resampling loop.
///
/// Each resample owns its stream, so loops can run in any order (or in
/// parallel) and still produce bit-identical results.
pub fn resample_stream(seed: u64, label: &str, index: u64) -> Pcg64 {
    let mut key = Vec::with_capacity(label.len() + 9);
    key.extend_from_slice(label.as_bytes());
    key.push(0);
    key.extend_from_slice(&index.to_le_bytes());
    stream(seed, &key)
}

/// Uniform integer in `0..n`. `n` must be positive.
#[inline]
pub fn below(rng: &mut Pcg64, n: usize) -> usize {
    debug_assert!(n > 0);
    ((rng.next_u64() as u128 * n as u128) >> 64) as usize
}

/// Uniform real in `[0, 1)` with 53 bits of precision.
#[inline]
pub fn unit(rng: &mut Pcg64) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

pub fn shuffle<T>(rng: &mut Pcg64, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = below(rng, i + 1);
        items.swap(i, j);
    }
}

/// Moves a uniformly random `k`-subset into `items[..k]`.
pub fn partial_shuffle<T>(rng: &mut Pcg64, items: &mut [T], k: usize) {
    let n = items.len();
    for i in 0..k.min(n) {
        let j = i + below(rng, n - i);
        items.swap(i, j);
    }
}
