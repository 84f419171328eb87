//! Deterministic derivation of per-purpose RNG streams from one run seed.
//!
//! Every random decision in the simulator (parameter init, client sampling,
//! batch shuffling, subsampling) draws from a ChaCha stream seeded by mixing
//! the run seed with a purpose tag and the relevant indices, never from
//! execution order. Reruns with the same seed are bitwise reproducible
//! regardless of thread scheduling.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub(crate) const TAG_INIT: u64 = 1;
pub(crate) const TAG_SAMPLE: u64 = 2;
pub(crate) const TAG_SHUFFLE: u64 = 3;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mix an ordered list of values into a single 64-bit seed.
pub(crate) fn derive_seed(parts: &[u64]) -> u64 {
    let mut h = 0x243f_6a88_85a3_08d3; // arbitrary non-zero start
    for &p in parts {
        h = splitmix64(h ^ p);
    }
    h
}

pub(crate) fn derived_rng(parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(parts))
}
