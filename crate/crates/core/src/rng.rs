//! Seed derivation.
//!
//! Every random stream in the crate is a ChaCha8 generator (counter based)
//! keyed by a seed derived from the master seed and a stream label, so any
//! component can be re-run in isolation and produce the same bits.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SeededRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Child seed for a named sub-stream.
pub fn derive_seed(seed: u64, stream: &str) -> u64 {
    splitmix64(seed ^ splitmix64(fnv1a(stream.as_bytes())))
}

/// Child seed for the `index`-th member of a named family of streams.
pub fn derive_indexed(seed: u64, stream: &str, index: u64) -> u64 {
    splitmix64(derive_seed(seed, stream).wrapping_add(splitmix64(index)))
}

pub fn rng_from(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stream(seed: u64, name: &str) -> SeededRng {
    rng_from(derive_seed(seed, name))
}
