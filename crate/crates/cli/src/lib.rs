//! Experiment harness for partitioned second-order optimization: runs
//! optimizers from a TOML config, exports pseudo-Hessian heatmap data and
//! checks derivatives.

pub mod check;
pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod experiment;
pub mod heatmap;
pub mod manifest;

pub use cli::run_cli;
pub use commands::{cmd_check, cmd_inspect, cmd_run, At};
pub use config::ExperimentConfig;
pub use error::CliError;
pub use heatmap::HeatmapExport;
pub use manifest::Manifest;
