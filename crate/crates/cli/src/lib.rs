//! Configuration-driven experiment runner for the power-density
//! reconstruction library.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;

pub use config::{ExperimentConfig, Overrides};
pub use error::{RunError, RunResult};
