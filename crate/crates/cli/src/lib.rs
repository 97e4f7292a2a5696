//! Command-line driver: configuration, dataset files, run manifests and
//! exports around the reconstruction library.

pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod export;
pub mod manifest;
pub mod pipeline;

pub use commands::main_with_args;
pub use config::RunConfig;
pub use error::{CliError, Result};
