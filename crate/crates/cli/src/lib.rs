//! Scenario configuration, run orchestration, verification drivers and
//! output writers behind the `patchflow` binary.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod verify;

pub use commands::{Options, RunSummary, Verdict};
pub use config::{Overrides, ScenarioConfig};
pub use error::CliError;
