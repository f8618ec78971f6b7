//! Deterministic, splittable random streams.
//!
//! Every random draw in the crate comes from a [`ChaCha8Rng`] identified by
//! `(seed, label, index)`. The label separates independent uses of one seed
//! (path simulation, optimizer iterations, multi-starts) and the index selects
//! a ChaCha stream, so per-path generators can be created in any order or on
//! any thread and still produce the same draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use rand_chacha::ChaCha8Rng as StreamRng;

/// Stream labels used inside the crate.
pub mod label {
    pub const SHOCK_PATHS: u64 = 0x5348_4f43;
    pub const GAUSSIAN_PATHS: u64 = 0x4741_5553;
    pub const GRADIENT: u64 = 0x4752_4144;
    pub const WORST_CASE: u64 = 0x5753_5443;
    pub const MULTISTART: u64 = 0x4d53_5452;
    pub const OBJECTIVE: u64 = 0x4f42_4a45;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generator for stream `index` of the family `(seed, label)`.
pub fn substream(seed: u64, label: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(label)));
    rng.set_stream(index);
    rng
}

/// Derives a child seed, e.g. one per optimizer iteration.
pub fn child_seed(seed: u64, label: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ splitmix64(label)) ^ index)
}
