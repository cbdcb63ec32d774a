//! File formats, run configuration and the command-line driver around
//! `convexify-core`.

pub mod commands;
pub mod config;
pub mod error;
pub mod formats;
pub mod manifest;

pub use commands::{run, Cli};
pub use error::{CliError, Result};
