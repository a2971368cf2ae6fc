//! Experiment harness around `rave-core`: run configuration, the
//! actor/learner training loop, the ground-truth oracle cache, metrics CSVs
//! and binary checkpoints.
//!
//! A run writes into its own directory (see [`RunConfig::run_dir`]):
//!
//! * `config.toml`: the fully resolved configuration; passing it back with
//!   `--config` reproduces the run.
//! * `metrics.csv`: one row per evaluation period (columns in
//!   [`metrics::header`]).
//! * `timing.csv`: wall-clock seconds per metrics row, kept apart so that
//!   `metrics.csv` is byte-for-byte reproducible.
//! * `checkpoint.bin`: the final state (format in [`checkpoint`]).

pub mod checkpoint;
pub mod config;
mod error;
pub mod harness;
pub mod metrics;
pub mod oracle;

pub use config::{Overrides, RunConfig};
pub use error::{LabError, Result};
pub use harness::{resume, run_experiment, run_seed, RunSummary, Trainer};
