//! Std companion of `dgfed-core`: TOML configuration, CSV output, the rayon
//! client executor and the command implementations behind the `dgfed` binary.

pub mod commands;
pub mod config;
mod error;
pub mod exec;
pub mod output;

pub use error::CliError;
