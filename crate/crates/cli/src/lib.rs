//! Command-line workflows around `dmfm-core`: simulation, estimation,
//! Monte Carlo tables and log-likelihood paths, all reading and writing
//! plain text.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod replicate;

pub use config::RunConfig;
pub use error::{CliError, CliResult};
