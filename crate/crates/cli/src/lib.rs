//! Config-driven entry points behind the `intformer` binary.

pub mod commands;
pub mod config;
pub mod manifest;

pub use config::{resolve, ExperimentConfig, Overrides};
