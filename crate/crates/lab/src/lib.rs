//! Command-line harness: configuration, experiment drivers, plots, and the
//! acceptance checks.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checks;
pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod plot;

pub use cli::cli_main;
pub use error::{LabError, Result};
