//! Experiment orchestration: trials with budget accounting, ECDF over
//! log-spaced targets, sweeps over noise grids, and CSV/JSON persistence.
//!
//! File formats:
//!
//! * per-trial CSV with the columns of [`RunRow`], in field order, a header
//!   row and empty fields for values a strategy does not produce;
//! * `summary.json`, a serialized [`ExperimentSummary`];
//! * `ecdf.csv` with columns `checkpoint,proportion`.

mod config;
mod ecdf;
mod record;
mod sweep;
mod trial;

pub use config::{default_budget, resolve_output_dir, ExperimentConfig, OUTPUT_ENV};
pub use ecdf::{compute_ecdf, ecdf_checkpoints, generate_targets, EcdfCurve, DEFAULT_TARGETS, FINAL_TARGET};
pub use record::{RunRecord, RunRow, TerminalStatus};
pub use sweep::{
    noise_grid, read_experiment, run_experiment, write_experiment, ExperimentResult, ExperimentSummary, SweepConfig,
    TrialSummary,
};
pub use trial::run_trial;
