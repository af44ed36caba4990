//! Seeded random streams.
//!
//! Every replicate owns one ChaCha key derived from `(seed, run_id)`; independent
//! consumers (data generation, observation noise, each algorithm) read from
//! separate ChaCha streams under that key, so adding a consumer never shifts
//! the numbers another one sees.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub type Rng = ChaCha20Rng;

/// Stream tags. Algorithm streams are offset by a per-method id.
pub mod streams {
    pub const DATA: u64 = 1;
    pub const NOISE: u64 = 2;
    pub const TEST: u64 = 3;
    pub const PRIOR: u64 = 4;
    pub const ALGORITHM: u64 = 1 << 16;
}

fn mix(mut x: u64) -> u64 {
    // splitmix64 finalizer
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

pub fn stream(seed: u64, run_id: u64, tag: u64) -> Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(mix(seed) ^ mix(run_id.wrapping_add(0x5DEE_CE66)));
    rng.set_stream(tag);
    rng
}

/// A child seed for generators that take a bare `u64`, such as a trace
/// simulation inside replicate `run_id`.
pub fn derive_seed(seed: u64, run_id: u64, tag: u64) -> u64 {
    use rand::RngCore;
    stream(seed, run_id, tag).next_u64()
}

/// Algorithm stream for the method with the given small integer id.
pub fn algorithm_stream(seed: u64, run_id: u64, method_id: u64) -> Rng {
    stream(seed, run_id, streams::ALGORITHM + method_id)
}
