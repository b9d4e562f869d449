//! Models, environments, learners and interference measurements.

pub mod env;
pub mod learners;
pub mod error;
pub mod metrics;
pub mod models;
pub mod rho_dynamics;
pub mod rng;
pub mod sample;

pub use error::{CoreError, Result};
