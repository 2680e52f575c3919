//! Frame-prediction anomaly detection workbench: a small differentiable
//! tensor engine, parallel-path U-Net video predictors with inter-frame
//! feature shifting, an analytical compute/parameter accountant, training
//! and evaluation loops, and a deterministic synthetic video corpus.

pub mod complexity;
pub mod data;
pub mod error;
pub mod experiment;
pub mod models;
pub mod scoring;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};

/// Derives an independent substream seed from a base seed and a salt
/// (splitmix64 finalizer). Used so per-video generators, per-epoch shuffles
/// and auxiliary streams never share state.
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed
        .wrapping_add(salt.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
