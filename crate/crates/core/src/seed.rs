//! Named deterministic random streams.
//!
//! Every source of randomness in the crate draws from a ChaCha stream
//! keyed by the run seed plus a purpose label ("init", "dropout",
//! "split", "synthetic"). Streams are independent, so adding draws to
//! one stage never perturbs another, and the same seed reproduces the
//! same run bit-for-bit.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stable 64-bit FNV-1a over the label. `DefaultHasher` is not
/// guaranteed stable across toolchains, so hash by hand.
fn label_hash(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in label.as_bytes() {
        h ^= u64::from(*byte);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// A deterministic RNG for one purpose within one seeded run.
pub fn stream(seed: u64, label: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(label_hash(label));
    rng
}
