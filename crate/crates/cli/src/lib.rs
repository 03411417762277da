//! Config-driven experiment harness over `exdiff-core`.

pub mod analyze;
pub mod cli;
pub mod config;
pub mod error;
pub mod io;
pub mod run;
pub mod scan;
pub mod two_agent;

pub use error::{CliError, Result};
