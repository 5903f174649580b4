//! Command-line plumbing for the `mfmix` binary: configuration, artifacts,
//! and the `solve` / `simulate` / `sweep` / `check` verbs.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;

pub use config::{Overrides, RunConfig};
pub use error::CliError;
