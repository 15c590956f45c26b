//! Configuration-driven experiment runner.
//!
//! A run reads one [`ExperimentConfig`], prepares the ensemble, runs the
//! requested sequences and writes CSV traces/scans plus a JSON summary into
//! the output directory. Every output depends only on the config: pairs are
//! reduced in a fixed order, so the thread count does not change any byte.

pub mod config;
pub mod experiments;
pub mod output;
pub mod validate;

use std::path::PathBuf;

pub use config::{ExperimentConfig, ExperimentKind};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Sim(#[from] stark_echo::Error),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("{failed} of {total} validation checks failed")]
    ValidationFailed { failed: usize, total: usize },
}

impl HarnessError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::ValidationFailed { .. } => 3,
            _ => 1,
        }
    }
}

/// Files written by a run.
#[derive(Clone, Debug, Default)]
pub struct RunOutput {
    pub files: Vec<PathBuf>,
}

pub fn run(config: &ExperimentConfig) -> Result<RunOutput, HarnessError> {
    config.validate()?;
    output::ensure_dir(&config.output_dir)?;
    match config.experiment {
        ExperimentKind::DemolitionScan => experiments::run_demolition_scan(config),
        ExperimentKind::ConditionalPhase => experiments::run_conditional_phase(config),
        ExperimentKind::SelectivityScan => experiments::run_selectivity_scan(config),
        ExperimentKind::Validate => validate::run_validation(config),
    }
}
