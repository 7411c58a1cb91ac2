//! Command-line front end: plan, interim, adapt and final steps of a
//! two-stage graphical trial kept in a state file, plus batch simulation.

pub mod commands;
pub mod config;
pub mod error;
pub mod report;
pub mod state;

pub use error::{CliError, Result};
