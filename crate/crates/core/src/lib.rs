//! Gated adversarial motion priors for a planar biped.
//!
//! A single PPO policy is trained with a task reward plus a style reward whose
//! discriminator is chosen per transition by a fixed projected-gravity gate:
//! a recovery discriminator for tilted/fallen states and a velocity-conditioned
//! locomotion discriminator otherwise.

// Validation is written as `!(x > 0.0)` on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod amp;
pub mod clips;
pub mod error;
pub mod harness;
pub mod nets;
pub mod normalizer;
pub mod par;
pub mod ppo;
pub mod rewards;
pub mod sim;

pub use error::{Error, Result};
