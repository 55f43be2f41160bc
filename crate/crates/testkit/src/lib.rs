//! Slow, independent reference implementations used to check the production
//! code. Nothing here depends on `retarget-core`: every oracle is written from
//! the defining formulas with plain `nalgebra` so that a bug in the library
//! cannot hide behind a shared helper.

pub mod gen;
pub mod oracle;

pub use nalgebra::{Matrix3, Vector3};

pub type V3 = Vector3<f64>;

/// Deterministic RNG for reproducible test instances.
pub fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}
