//! Batch experiment runner: JSON configs in, reports, grid CSVs, plot data
//! and a hashed manifest out.

pub mod config;
pub mod run;

pub use config::{ExperimentConfig, Expr, ValidationError};
pub use run::{exit_code, refine, run, RunSummary};
