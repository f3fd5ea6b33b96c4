//! Targeted adversarial perturbations for differentiable speech and
//! classification models, and measurement of how well they transfer
//! across model pools.

pub mod attack;
pub mod audio;
pub mod cli;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod models;
pub mod synth;
pub mod targets;

pub use error::{Error, Result};
