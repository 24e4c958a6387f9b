//! Declarative scenario runner for `ergodic-core`.
//!
//! A run parses a TOML scenario, executes it against one module entry
//! point, and writes CSV/JSON artifacts plus a `manifest.json` into an
//! output directory. Identical configs produce byte-identical artifacts;
//! only the manifest's wall time and timestamp change between runs.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod runner;
pub mod scenarios;

pub use config::{ConfigError, ScenarioConfig, ScenarioKind};
pub use runner::{run_scenario, validate_file, CliError, RunOptions, RunSummary, OUT_DIR_ENV};
pub use scenarios::{execute, Artifact, RuntimeError};
