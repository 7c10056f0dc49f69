//! Config-driven experiment runner for the `cdkt` binary.

pub mod compare;
pub mod config;
pub mod runner;

pub use compare::{build_table, compare_files, Table};
pub use config::{load_config, Dataset, ExperimentConfig};
pub use runner::{build_federation, metrics_csv, read_summary, run_experiment, summarize, RunArtifacts, Summary};
