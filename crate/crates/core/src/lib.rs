//! Boosted multi-stage dense prediction.
//!
//! A stack of small encoder-decoder networks is trained end to end while the
//! per-pixel loss weights of every stage are re-derived from the confidence of
//! the stage before it. Pixels an earlier stage got confidently wrong gain
//! weight, confidently right pixels lose it. The crate also carries the
//! inference pipeline (average posterior, certainty classification, seeded
//! region growing, majority smoothing), object-level evaluation metrics and a
//! deterministic synthetic benchmark.
//!
//! Everything here is pure computation over `alloc` containers; file formats,
//! the command line and PNG IO live in the `attnboost` companion crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod autodiff;
pub mod basemodel;
pub mod boosting;
mod error;
pub mod grid;
pub mod gridsearch;
pub mod metrics;
pub mod optim;
pub mod segmentation;
pub mod synthdata;
pub mod tensor;

pub use error::{Error, Result};
pub use grid::Grid;
pub use tensor::Tensor;

/// Seeded generator used for weight init, dropout masks, shuffling and scenes.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Builds the crate's generator from a 64-bit seed.
pub fn seeded_rng(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}
