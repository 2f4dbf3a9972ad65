//! Library side of the `tgi` command: configuration, manifests and the
//! subcommand implementations.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

pub use config::{ExperimentConfig, SourceConfig, SweepParameter, SweepSpec};
pub use error::CliError;
pub use manifest::Manifest;
