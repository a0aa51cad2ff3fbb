//! Prediction, measurement, and mitigation of drift in recovered
//! physical-quantity distributions.
//!
//! A dataset of trajectories encodes an intended marginal over a scalar
//! physical quantity. Local perturbations typical of a generator class,
//! emulated by a data deviation kernel, move probability between quantity
//! values once trajectories are measured. This crate generates the
//! trajectory families, implements the measurement rule, estimates the
//! resulting quantity-transport kernel, and optimizes a code-space pairing
//! that balances that transport.

pub mod cli;
pub mod devkernel;
pub mod error;
pub mod mitigation;
pub mod prediction;
pub mod recovery;
pub mod rng;
pub mod systems;

pub use error::{Error, Result};
