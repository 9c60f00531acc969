//! Simulation harness for the underwater decoy-state BB84 link.
//!
//! Reads TOML experiment configs, runs seeded experiments in one process or
//! across two processes over TCP, and writes JSON reports, CSV curves and
//! frame transcripts. The physics and the protocol engine live in
//! `uwqkd-core`.

pub mod calibration;
pub mod config;
pub mod net;
pub mod report;
pub mod run;
pub mod sim;
pub mod sweep;
pub mod tomography;
pub mod transcript;

pub use config::{ConfigError, ConfigFile, ExperimentConfig, Seeds, StatisticsMode};
pub use report::{Outcome, RunReport, Topology};
pub use run::{run_experiment, RunOptions, RunOutput};
