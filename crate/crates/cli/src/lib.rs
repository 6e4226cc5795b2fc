//! Experiment runner behind the `fedode` binary.

pub mod commands;
pub mod config;
pub mod csv;

pub use config::ExperimentConfig;
