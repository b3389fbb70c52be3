//! Named, seedable random streams.
//!
//! Every stream is a ChaCha8 generator keyed by the root seed
//! (`ChaCha8Rng::seed_from_u64(root)`) with its 64-bit stream id set to the
//! FNV-1a hash of the stream name. Streams with different names are
//! independent; the same `(root, name)` pair reproduces the same sequence on
//! every platform.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn stream(root_seed: u64, name: &str) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(root_seed);
    rng.set_stream(fnv1a(name.as_bytes()));
    rng
}

/// Stream `name/index`, for per-item randomness (per step, per sample, ...).
pub fn indexed(root_seed: u64, name: &str, index: u64) -> StreamRng {
    stream(root_seed, &format!("{name}/{index}"))
}
