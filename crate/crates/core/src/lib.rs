//! Structure-preserving nonlinear model reduction for conservative wave
//! equations via energy-quadratizing liftings.

pub mod basis;
pub mod error;
pub mod harness;
pub mod hyperreduction;
pub mod integrators;
pub mod lifting;
pub mod metrics;
pub mod models;
pub mod rom;

pub use error::{Error, Result};
