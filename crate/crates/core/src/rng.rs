//! Seeded random streams.
//!
//! Every consumer of randomness draws from a ChaCha8 stream keyed by a
//! global seed and a string label: the seed selects the key and the
//! 64-bit FNV-1a hash of the label selects the ChaCha stream id. Streams
//! with different labels are independent, and the bytes a stream produces
//! do not depend on the platform or on how many other streams exist.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use rand::Rng as RngExt;

pub type Rng = ChaCha8Rng;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// The stream for `label` under `seed`.
pub fn stream(seed: u64, label: &str) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a64(label.as_bytes()));
    rng
}
