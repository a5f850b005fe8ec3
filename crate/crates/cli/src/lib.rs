//! Batch front end: trial ingestion, configuration files, the `fit`,
//! `simulate`, `study` and `summarize` commands, and result persistence.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod manifest;

pub use error::{CliError, Result};
