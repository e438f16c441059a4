//! File formats, run manifests and the `semrl` command line around
//! `semrl-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
mod error;
pub mod export;
pub mod manifest;
pub mod metrics;
pub mod states;

pub use error::{CliError, CliResult, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, EXIT_VALIDATION};
