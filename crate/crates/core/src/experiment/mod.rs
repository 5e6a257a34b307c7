//! Experiment orchestration: TOML configuration, the run-directory layout and
//! the pipeline stages behind each CLI command.
//!
//! Stages record a stamp carrying the pipeline hash (model, training,
//! schedule, data and master seed). A stage refuses upstream artifacts that
//! are missing or were produced under a different hash.

mod config;
mod pipeline;
mod report;
mod run_dir;
pub mod tables;


pub use config::{AnalysisConfig, DataConfig, DataSource, ExperimentConfig, ModelSection, TrainSection};
pub use pipeline::{Experiment, MaskFamily, TrainSummary, IMP, ONESHOT, RANDOM};
pub use report::ExperimentReport;
pub use run_dir::{RunDir, RunLock, Stage, Stamp};
