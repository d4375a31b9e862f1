//! Seed derivation.
//!
//! Every random stream is a `ChaCha8Rng` seeded with
//! `derive_seed(root, stage, index)`, where `stage` names the pipeline step
//! (design, paths, noise, ...) and `index` is the curve, draw or replication
//! counter. Streams for different counters never overlap in their seeds, so
//! changing `N` or `M_i` does not reshuffle unrelated draws and the results
//! do not depend on the number of worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stage tags used by [`derive_seed`].
pub mod stage {
    pub const DESIGN: u64 = 1;
    pub const PATHS: u64 = 2;
    pub const NOISE: u64 = 3;
    pub const CURVE_SIZES: u64 = 4;
    pub const VOLUMES: u64 = 5;
    pub const GAUSSIAN_DRAWS: u64 = 6;
    pub const SUBSAMPLES: u64 = 7;
    pub const TRUTH: u64 = 8;
    pub const REPLICATION: u64 = 9;
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// One step of the splitmix64 output function.
#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `splitmix64(splitmix64(root ^ stage * GOLDEN) ^ index)`.
#[inline]
pub fn derive_seed(root: u64, stage: u64, index: u64) -> u64 {
    splitmix64(splitmix64(root ^ stage.wrapping_mul(GOLDEN)) ^ index)
}

pub fn stream(root: u64, stage: u64, index: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, stage, index))
}
