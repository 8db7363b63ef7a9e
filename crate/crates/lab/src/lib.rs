//! Experiment harness for `tsc-core`: TOML scenarios, seeded episodes,
//! parallel sweeps, result files with a digest manifest, and the oracle
//! suite shared by the CLI and the acceptance tests.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod oracle;
pub mod output;
pub mod runner;
pub mod scenario;
pub mod sweep;

pub use output::{write_results, Manifest};
pub use runner::{run_episode, RunError, RunOptions, RunOutput, RunResult, TrainingCache};
pub use scenario::{load, ConfigError, ControllerSpec, Scenario, SCHEMA_VERSION};
pub use sweep::{sweep, ComparisonRow, SweepAxes};
