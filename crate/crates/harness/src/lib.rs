//! Experiment runner for RRU and baseline recurrent cells: single trials,
//! learning-rate × size grids, dropout sweeps and RRU ablation suites.

pub mod config;
pub mod dataset;
pub mod error;
pub mod solve;
pub mod sweep;
pub mod trial;

pub use config::{CellKind, CellSpec, DatasetSpec, ExperimentConfig, GridAxes, Overrides, TextSource, TrialConfig};
pub use dataset::{DataShape, Metric, Split, TrialData};
pub use error::{HarnessError, Result};
pub use solve::{build_model_config, solve_hidden_size};
pub use sweep::{run_ablation_suite, run_dropout_sweep, run_grid, GridMatrix, SweepOptions, SweepOutcome};
pub use trial::{run_trial, EpochRecord, RunOptions, TrialRecord, TrialStatus};
