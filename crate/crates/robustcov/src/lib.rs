//! Command-line front end, JSON file formats and Monte Carlo toys for
//! [`robustcov_core`].
//!
//! The `robustcov` binary is a thin wrapper around [`cli::run`]; the
//! subcommands are also callable as library functions (`cli::cmd_*`).

pub mod cli;
mod error;
pub mod io;
pub mod toys;

pub use error::{CliError, EXIT_NUMERIC, EXIT_OK, EXIT_VALIDATION};
