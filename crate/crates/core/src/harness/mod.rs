//! Experiment orchestration: task sequences, passes, evaluation and result
//! files.

pub mod config;
pub mod emit;
pub mod record;
pub mod run;
pub mod sweep;

pub use config::{EarlyStop, ExperimentConfig, ExperimentKind};
pub use emit::{emit_results, Format};
pub use record::{EarlyStopMark, EvalRow, Results, RunRecord, RunStatus};
pub use run::{run_experiment, run_sequential, run_split_early_stop};
