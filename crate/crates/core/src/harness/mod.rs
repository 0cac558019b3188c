//! Configuration, Monte-Carlo orchestration and artifact export.
//!
//! Every subcommand writes under `<out>/<config hash>/` and refreshes
//! `manifest.json`, which lists a SHA-256 per artifact. Outputs depend only on
//! the config (including its seed), never on the number of worker threads.

pub mod artifacts;
mod config;
mod pipeline;
mod report;

pub use artifacts::{ArtifactDir, Manifest};
pub use config::{
    ArtifactConfig, BoundConfig, ExperimentConfig, FilterConfig, InitConfig, InputConfig, MatrixSpec, MetricsConfig,
    ModelConfig, UiModelConfig, WarmStartConfig, CASE_STUDY_1, CONFIG_VERSION,
};
pub use pipeline::{
    run_bound, run_estimate, run_simulate, BoundCandidate, BoundSummary, EstimateSummary, Experiment,
    FilterDiagnostics,
};
pub use report::{run_report, Report, TableRow, UiStatus, NOT_CONVERGED_NMSE};
