//! Desk-scale simulator for the learning-order effect of large vs small
//! initial learning rates on a two-layer ReLU network.
//!
//! The crate is organized bottom-up: [`distribution`] generates the
//! two-pattern data, [`network`] holds the model, loss and exact gradients,
//! [`conv`] the shared-filter variant, [`trainer`] the noisy gradient descent
//! schedules, [`diagnostics`] the per-record metrics and [`runner`] the
//! experiment front end behind the `lol` binary.

pub mod conv;
pub mod diagnostics;
pub mod distribution;
pub mod error;
pub mod network;
pub mod rng;
pub mod runner;
pub mod trainer;

pub use error::{Error, Result};
