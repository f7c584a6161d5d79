//! Seeded randomness. Every stochastic choice in the pipeline draws from a
//! ChaCha8 stream derived from the user seed plus a fixed path of integers
//! (step, sample index, ...), so runs are bit-reproducible across platforms.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Fold `parts` into `seed` with splitmix64 finalization.
pub fn derive(seed: u64, parts: &[u64]) -> u64 {
    let mut s = splitmix(seed);
    for &p in parts {
        s = splitmix(s ^ splitmix(p.wrapping_add(0x9E37_79B9_7F4A_7C15)));
    }
    s
}

pub fn derived(seed: u64, parts: &[u64]) -> Rng {
    seeded(derive(seed, parts))
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
