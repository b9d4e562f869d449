//! Seeded randomness: xoshiro256** seeded through splitmix64.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256StarStar;

pub type Rng = Xoshiro256StarStar;

/// `seed_from_u64` on xoshiro expands the seed with splitmix64.
pub fn seeded(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// splitmix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent stream for a named purpose under one master seed.
pub fn derive(seed: u64, stream: &str) -> u64 {
    stream
        .bytes()
        .fold(mix64(seed), |h, b| mix64(h ^ u64::from(b)))
}

pub fn stream(seed: u64, name: &str) -> Rng {
    seeded(derive(seed, name))
}
