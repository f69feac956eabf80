//! Experiment harness: reproducible runs of the estimation pipeline that
//! emit CSV tables and a JSON summary per experiment.

pub mod context;
pub mod experiments;
pub mod output;

pub use context::{config_hash, RunContext};
pub use experiments::{run_experiment, EXPERIMENT_IDS};
pub use output::ExperimentResult;
