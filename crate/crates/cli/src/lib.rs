//! Experiment runner for policy optimization by continuation on the hill-car
//! task: landscape sweeps, the identity verification suite, optimizer runs
//! and multi-seed comparisons.

pub mod commands;
pub mod config;
pub mod output;
pub mod verify;

pub use config::{ConfigError, ExperimentConfig, Method};
