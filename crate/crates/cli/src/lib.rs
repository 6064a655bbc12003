//! Configuration, ensembles and output files for the shell-model experiments.
pub mod config;
pub mod ensemble;
pub mod error;
pub mod output;
pub mod run;

pub use config::{load_config, resolve_seed, ExperimentConfig, ExperimentKind, SEED_ENV};
pub use ensemble::{run_ensemble, EnsembleResult, EnsemblePlan};
pub use error::{CliError, Result};
pub use run::{run_experiment, RunOptions, RunOutcome};
