//! Deterministic random streams.
//!
//! Every consumer of randomness gets its own ChaCha stream keyed by a
//! 64-bit seed and a 64-bit stream id, so instances, chains and replicas
//! never share or overlap sequences regardless of scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

pub type StreamRng = ChaCha12Rng;

/// Stream ids reserved for the different consumers of a single seed.
pub mod purpose {
    pub const INSTANCE: u64 = 0x1;
    pub const CHAIN: u64 = 0x2;
    pub const INIT_STATE: u64 = 0x3;
    pub const TEST: u64 = 0xF;
}

pub fn stream(seed: u64, stream_id: u64) -> StreamRng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent seed and a path of labels.
pub fn derive_seed(parent: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(parent), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}
