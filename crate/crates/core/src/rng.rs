//! Deterministic random streams keyed by a master seed and a path of indices.
//!
//! A stream depends only on its key, never on how many other streams were
//! created before it, so parallel schedules reproduce sequential results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a seed with a sequence of indices into a new 64-bit seed.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    let mut state = seed;
    let mut out = splitmix64(&mut state);
    for &p in path {
        state ^= p.wrapping_mul(0xD6E8_FEB8_6659_FD93).rotate_left(17) ^ out;
        out = splitmix64(&mut state);
    }
    out
}

/// Stream tags separating independent uses of the same seed.
pub mod tag {
    pub const ESTEP: u64 = 1;
    pub const STUDY: u64 = 2;
    pub const SCORES: u64 = 3;
    pub const SAMPLES: u64 = 4;
}

pub fn stream(seed: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, path))
}
