//! Seeded random streams.
//!
//! Every consumer of randomness derives its own stream from the run seed and
//! a tuple of labels, so adding or removing one consumer never shifts the
//! draws of another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic generator for `(seed, labels…)`.
pub fn stream(seed: u64, labels: &[u64]) -> Rng {
    let mut h = splitmix(seed);
    for &l in labels {
        h = splitmix(h ^ splitmix(l));
    }
    ChaCha8Rng::seed_from_u64(h)
}

/// Stable label for a string, for use in [`stream`].
pub fn label(name: &str) -> u64 {
    name.bytes()
        .fold(0xCBF2_9CE4_8422_2325_u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01B3))
}
