//! Named random streams split from one top-level seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Streams used across the crate; each is independent of the others.
pub mod stream {
    pub const INIT: &str = "init";
    pub const TRAIN: &str = "train";
    pub const LENGTHDROP: &str = "lengthdrop";
    pub const LAYERDROP: &str = "layerdrop";
    pub const SEARCH: &str = "search";
    pub const DATA: &str = "data";
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Deterministic generator for the stream `name` under `seed`.
pub fn stream(seed: u64, name: &str) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(name.as_bytes()));
    rng
}

/// Sub-stream `index` of a named stream, e.g. one per search iteration.
pub fn substream(seed: u64, name: &str, index: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    rng.set_stream(fnv1a(name.as_bytes()));
    rng
}
