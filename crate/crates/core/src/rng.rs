//! Seeded random streams. Every stochastic component draws from a
//! [`SplitMix64`] stream derived from a user seed and a fixed label, so
//! results do not depend on call order across subsystems.

use rand::SeedableRng;
pub use rand_xoshiro::SplitMix64;

/// Stream for `seed` namespaced by `label` and `index`.
pub fn stream(seed: u64, label: &str, index: u64) -> SplitMix64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    SplitMix64::seed_from_u64(seed ^ h.rotate_left(17) ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

pub fn seeded(seed: u64) -> SplitMix64 {
    SplitMix64::seed_from_u64(seed)
}
