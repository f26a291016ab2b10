//! Command-line front end for the pisim trajectory simulator: INI configs
//! with `--key=value` overrides, single runs and parameter sweeps, CSV time
//! series and JSON summaries.

pub mod config;
pub mod error;
pub mod output;
pub mod run;
pub mod sweep;

pub use error::CliError;
