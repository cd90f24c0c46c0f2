//! Config-driven experiment runner for `dsmo-core`.

pub mod commands;
pub mod config;
mod error;

pub use config::ExperimentConfig;
pub use error::CliError;
