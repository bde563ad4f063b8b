//! Named, counter-addressed RNG streams.
//!
//! Every source of randomness in a run is derived from the base seed, a
//! domain label, and integer indices (epoch, step, image, sample). Streams
//! are independent of thread scheduling, so parallel evaluation stays
//! reproducible, and resuming from a checkpoint regenerates the exact
//! streams of an uninterrupted run.

use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;

/// Domain labels for the independent named streams of a run.
pub mod domain {
    pub const INIT: &str = "init";
    pub const SHUFFLE: &str = "shuffle";
    pub const SAMPLER: &str = "sampler";
    pub const CHANNEL: &str = "channel";
    pub const EVAL: &str = "eval";
}

/// splitmix64 step; the standard 64-bit finalizer mix.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a reproducible ChaCha stream from `(seed, domain, ids)`.
///
/// The 256-bit ChaCha key is filled by iterating splitmix64 over a state
/// that absorbs the seed, the domain bytes, and each index in order.
pub fn stream(seed: u64, domain: &str, ids: &[u64]) -> ChaCha8Rng {
    let mut state = seed ^ 0x5851_f42d_4c95_7f2d;
    for chunk in domain.as_bytes().chunks(8) {
        let mut word = [0u8; 8];
        word[..chunk.len()].copy_from_slice(chunk);
        state ^= u64::from_le_bytes(word);
        splitmix64(&mut state);
    }
    for &id in ids {
        state ^= id.wrapping_mul(0xd6e8_feb8_6659_fd93);
        splitmix64(&mut state);
    }
    let mut key = [0u8; 32];
    for word in key.chunks_exact_mut(8) {
        word.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
