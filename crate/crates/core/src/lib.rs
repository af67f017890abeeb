//! Simulator for the two-photon entanglement-duality experiment.

pub mod error;
pub mod linalg;
pub mod metrics;
pub mod detection;
pub mod optics;
pub mod scenario;
pub mod source;
pub mod state;
pub mod tomography;

pub use error::{Error, Result};
