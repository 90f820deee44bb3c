//! Experiment runner for the `mkvmlmc` command-line tool.
//!
//! [`config`] turns a JSON file into validated core objects, [`experiments`]
//! runs one subcommand and [`output`] writes its CSV tables, fits and JSON
//! documents. [`cli::run`] ties them together.

pub mod cli;
pub mod config;
pub mod error;
pub mod exec;
pub mod experiments;
pub mod levy;
pub mod output;

pub use config::{Config, Experiment, Resolved};
pub use error::AppError;
pub use exec::RayonExecutor;
pub use output::Report;
