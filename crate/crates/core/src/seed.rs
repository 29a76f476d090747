//! Seed derivation. A master seed expands into per-stage seeds with a
//! splitmix64 step over the stage name; per-item streams xor the item id in.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for a named stage (`"paths"`, `"censoring"`, `"aux"`, ...).
pub fn stage_seed(master: u64, stage: &str) -> u64 {
    stage
        .bytes()
        .fold(splitmix64(master), |acc, b| splitmix64(acc ^ u64::from(b)))
}

/// Independent RNG for item `id` within a stage.
pub fn item_rng(stage: u64, id: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(stage ^ id))
}
