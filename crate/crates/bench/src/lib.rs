//! Experiment driver for the `deq-bench` command-line tool: configuration
//! loading, training runs with CSV/JSON outputs, backward-pass benchmarks
//! and solver traces.

pub mod backward_bench;
pub mod config;
pub mod error;
pub mod manifest;
pub mod solve_demo;
pub mod train;

pub use config::RunConfig;
pub use error::CliError;
