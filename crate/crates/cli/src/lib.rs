//! Experiment harness: configuration, leaf pipeline and subcommands of the `ftr-scatter` binary.

pub mod commands;
pub mod config;
pub mod pipeline;

pub use config::RunConfig;
pub use pipeline::{partition, sweep, LeafCache, Problem, SweepPoint};
