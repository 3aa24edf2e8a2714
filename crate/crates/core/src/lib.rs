//! Imputation of missing building energy time series (indoor air temperature,
//! heating and cooling flow rates) with convolutional denoising autoencoders,
//! optionally constrained by a discretized building thermal balance.
//!
//! The crate covers the full experimental pipeline: ingestion of raw HVAC
//! operational records, derivation of heating/cooling flow rates, resampling
//! to daily 48-step profiles, IQR/correlation monitoring-period filtering,
//! model training with masking-noise augmentation, classical baselines,
//! seeded hyperparameter search, a synthetic ground-truth generator, and a
//! deterministic experiment harness with delimited-text reports.

pub mod baselines;
pub mod config;
pub mod correlation;
pub mod corruption;
pub mod data;
pub mod error;
pub mod harness;
pub mod model;
pub mod nn;
pub mod physics;
pub mod synthetic;
pub mod tuning;

pub use error::{Error, Result};

/// Deterministic seed derivation for nested experiment components.
pub mod seeds {
    /// Fold `parts` into `base` with splitmix64 absorption; stable across
    /// platforms and releases.
    pub fn derive(base: u64, parts: &[u64]) -> u64 {
        let mut state = base ^ 0x9E37_79B9_7F4A_7C15;
        for &part in parts {
            state = splitmix64(state ^ part);
        }
        splitmix64(state)
    }

    fn splitmix64(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Seeded Fisher-Yates shuffle.
    pub fn shuffle<T>(slice: &mut [T], rng: &mut impl rand::Rng) {
        for i in (1..slice.len()).rev() {
            slice.swap(i, rng.gen_range(0..=i));
        }
    }

}
