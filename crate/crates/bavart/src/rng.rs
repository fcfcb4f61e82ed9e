//! Deterministic RNG stream derivation.
//!
//! Every random step of the engine draws from a `ChaCha12` stream keyed by
//! the master seed, a domain tag and up to two indices (sweep, equation,
//! draw, ...). Streams are independent of thread scheduling, so results are
//! byte-identical for any thread count.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Domain tags keeping the per-purpose streams disjoint.
pub mod domains {
    pub const TREES: u64 = 1;
    pub const COV_SV: u64 = 2;
    pub const HORSESHOE: u64 = 3;
    pub const PREDICT: u64 = 4;
    pub const GIRF: u64 = 5;
    pub const DGP: u64 = 6;
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A `ChaCha12` stream for `(seed, domain, a, b)`.
pub fn stream(seed: u64, domain: u64, a: u64, b: u64) -> ChaCha12Rng {
    let mut state = seed;
    // Fold the key material through splitmix so nearby keys decorrelate.
    let mut mixed = splitmix64(&mut state);
    state ^= domain.wrapping_mul(0xd6e8_feb8_6659_fd93);
    mixed ^= splitmix64(&mut state);
    state ^= a.wrapping_mul(0xa076_1d64_78bd_642f);
    mixed ^= splitmix64(&mut state);
    state ^= b.wrapping_mul(0xe703_7ed1_a0b4_28db);
    mixed ^= splitmix64(&mut state);

    let mut key = [0u8; 32];
    let mut s = mixed;
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut s).to_le_bytes());
    }
    ChaCha12Rng::from_seed(key)
}
