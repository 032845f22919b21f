//! Two-stage loan scoring with wide-and-deep networks.
//!
//! Stage 1 estimates the probability of default (PD) with a wide-and-deep
//! classifier trained on a class-rebalanced set. Loans whose PD does not
//! exceed the gate threshold move on to stage 2, a wide-and-deep regressor
//! that predicts the loan's internal rate of return. Lenders then rank by
//! predicted IRR.
//!
//! The crate is `no_std` (it needs `alloc`); file formats, CSV ingestion and
//! the command line live in the `loanscore` crate.
#![no_std]

extern crate alloc;
#[cfg(any(feature = "std", test))]
extern crate std;

pub mod baselines;
pub mod cohort;
pub mod domain;
pub mod features;
pub mod irr;
pub mod pipeline;
pub mod resample;
pub mod synth;
pub mod widedeep;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The single RNG used everywhere a seed appears, so results are identical
/// across platforms.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
