//! Dataset generation, training, evaluation and the ablation grid.

pub mod ablate;
pub mod commands;
pub mod config;
pub mod evaluate;
pub mod planted;
pub mod train;

pub use ablate::{ablate, AblationTable};
pub use commands::{cmd_ablate, cmd_eval, cmd_report, cmd_synth, cmd_train};
pub use config::{ExperimentConfig, PlantedConfig};
pub use evaluate::{evaluate, write_outputs};
pub use planted::{planted_suite, run_planted, PlantedRun};
pub use train::{log_csv, train, EpochLog, TrainOutput};

use crate::error::{Error, Result};

pub const THREADS_ENV: &str = "AGENTREG_THREADS";

/// Worker cap from `AGENTREG_THREADS`; `None` when unset.
pub fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => parse_threads(&v).map(Some),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(std::env::VarError::NotUnicode(_)) => {
            Err(Error::Config(format!("{THREADS_ENV} is not valid text")))
        }
    }
}

pub fn parse_threads(v: &str) -> Result<usize> {
    match v.trim().parse::<usize>() {
        Ok(n) if n > 0 => Ok(n),
        _ => Err(Error::Config(format!(
            "{THREADS_ENV} must be a positive integer, got {v:?}"
        ))),
    }
}
