//! Deterministic per-purpose RNG sub-streams.
//!
//! All randomness in the crate flows through [`stream`]: one master seed,
//! plus a string tag (and optional index) per purpose, so that e.g. changing
//! the noise model never shifts node placements and dataset splits stay
//! disjoint.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(tag: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325_u64;
    for b in tag.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Sub-stream for `(seed, tag)`.
pub fn stream(seed: u64, tag: &str) -> ChaCha8Rng {
    stream_indexed(seed, tag, 0)
}

/// Sub-stream for `(seed, tag, index)`; distinct triples give independent
/// streams.
pub fn stream_indexed(seed: u64, tag: &str, index: u64) -> ChaCha8Rng {
    let mut state = seed ^ fnv1a(tag) ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
