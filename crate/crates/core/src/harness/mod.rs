//! Experiment orchestration: run configuration, training runs across seeds
//! and compression modes, analytical activation-memory accounting, spectral
//! scans over checkpoints, and metrics emission.

mod config;
mod memory;
mod metrics;
mod run;
mod scan;

pub use config::{RunConfig, RunMode, RunSettings, SiteOverride, TrackerSettings};
pub use memory::{memory_report, site_memory, MemoryReport, SiteMemory};
pub use metrics::emit_metrics;
pub use run::{
    run_experiment, Aggregate, ExperimentResult, RunMetrics, StepRow, TraceRow, ValRow,
};
pub use scan::{scan_to_csv, spectral_scan, ScanRow};

use thiserror::Error;

use crate::maze::MazeError;
use crate::model::ModelError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("seed {seed} failed: {message}")]
    SeedFailed { seed: u64, message: String },
    #[error(transparent)]
    Maze(#[from] MazeError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
