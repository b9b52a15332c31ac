//! Seeded, replayable random streams.
//!
//! Every stochastic component draws from a generator derived from a
//! `(seed, stream)` pair — gradient noise keyed by step index, data batches
//! keyed by batch index, initializers keyed by layer. Replaying the same
//! pair always yields the same bits, which is what makes paired-seed
//! experiments and byte-identical reruns possible.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer: a cheap, well-mixed 64→64 bit hash.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic generator for logical stream `stream` of seed `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    let mut x = splitmix64(seed) ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    for chunk in key.chunks_exact_mut(8) {
        x = splitmix64(x);
        chunk.copy_from_slice(&x.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
