//! Deterministic seed derivation.
//!
//! Every random task (a fold fit, a forest tree, a Monte Carlo replicate) gets
//! its own generator seeded from the master seed and a path of stream labels,
//! so serial and parallel execution draw identical numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type TaskRng = ChaCha8Rng;

/// Stream labels used across the crate.
pub mod stream {
    pub const FOLDS: u64 = 0x01;
    pub const NUISANCE: u64 = 0x02;
    pub const SUPER_LEARNER: u64 = 0x03;
    pub const LEARNER: u64 = 0x04;
    pub const BANDWIDTH: u64 = 0x05;
    pub const REPLICATE: u64 = 0x06;
    pub const TRUTH: u64 = 0x07;
    pub const CALIBRATION: u64 = 0x08;
    pub const COHORT: u64 = 0x09;
}

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(master), |h, &label| splitmix64(h ^ splitmix64(label)))
}

pub fn task_rng(master: u64, path: &[u64]) -> TaskRng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, path))
}

/// Order-independent key for a data row: depends only on the seed and the
/// row's contents, so permuting rows permutes keys with them.
pub fn row_key(seed: u64, values: impl IntoIterator<Item = f64>) -> u64 {
    values
        .into_iter()
        .fold(splitmix64(seed ^ 0xA5A5_A5A5), |h, x| splitmix64(h ^ x.to_bits()))
}
