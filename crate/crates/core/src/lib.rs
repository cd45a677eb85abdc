//! Extended object tracking with a coupled velocity model.
//!
//! The crate provides the measurement model and its pseudo-linearization
//! ([`model`]), a centralized sequential WLS filter ([`filter_central`]), a
//! consensus-based distributed WLS filter for sensor networks with naive
//! nodes ([`filter_distributed`]), sensor network simulation ([`network`]),
//! reference scenarios ([`scenarios`]), tracking metrics ([`metrics`]) and a
//! single Monte Carlo run driver ([`sim`]).

pub mod error;
pub mod filter_central;
pub mod filter_distributed;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod network;
pub mod scenarios;
pub mod sim;

pub use error::{Error, Result};
