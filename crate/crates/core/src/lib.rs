//! Simulation and tomography toolkit for a single-photon detector built on
//! engineered nonlinear dissipation.
//!
//! Units: angular frequencies and rates in rad/s, times in seconds.

pub mod detector;
pub mod error;
pub mod hilbert;
pub mod lindblad;
pub mod metrics;
pub mod report;
pub mod tomography;

pub use error::{Error, Result};
