//! Command implementations behind the `lat` binary.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

pub use checkpoint::Checkpoint;
pub use error::{CliError, Result};
