//! Experiment configuration, A/B runs, reports and the command line.

mod ab;
mod ab_ensemble;
mod cli;
mod config;
mod data;
mod report;

pub use ab::{ab_banks, run_ab_transitions, test_sequence};
pub use cli::{cli_run, EvalReport, Manifest, ManifestEntry, MANIFEST_FILE};
pub use ab_ensemble::{ensemble_data_spec, run_ab_ensemble};
pub use config::{DatasetSpec, EnsembleSpec, ExperimentConfig, ModelSpec};
pub use data::{observation_model, switch_sequence, training_sets};
pub use report::{emit_plot_data, median, relative_improvement, ArmRun, MetricsReport, SeedResult};
