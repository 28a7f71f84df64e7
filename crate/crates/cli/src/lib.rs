//! Scenario files, trace and field IO, and the command-line driver of
//! `cipwave-core`.

pub mod commands;
pub mod config;
pub mod io;

pub use commands::{cmd_full, cmd_stage1, cmd_stage2, cmd_synth, run_stage, Options, RunManifest, Stage};
pub use config::{ConfigError, RunConfig};
