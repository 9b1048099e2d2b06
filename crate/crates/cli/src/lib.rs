//! Experiment runner: TOML experiment files, cached corpus and pretraining
//! artifacts, per-seed training runs and table-shaped reports.

pub mod config;
pub mod report;
pub mod runner;

pub use config::{parse_config, ConfigError, ExperimentConfig, LossChoice, Pipeline, RunSpec};
pub use report::{aggregate, write_reports, ReportRow, RunResult, MARGINS_CSV, REPORT_CSV, REPORT_MD};
pub use runner::{cached_corpus, load_records, run_experiment, RunRecord};
