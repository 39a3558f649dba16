//! Command implementations behind the `isectreg` binary.
//!
//! Every command reads an [`ExperimentConfig`] (defaults when no file is
//! given), echoes the effective config into its output directory and writes
//! pretty-printed JSON reports whose bytes depend only on the config.

pub mod claim;
pub mod commands;
pub mod config;

use std::path::Path;

use serde::Serialize;
use thiserror::Error;

pub use claim::{reproduce_claim, ClaimReport, RunSummary, SeedResult};
pub use commands::{convergence_demo, eval_fidelity, gen_data, train, TrainOverrides, TrainSummary};
pub use config::{ExperimentConfig, Mode, SEED_ENV};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;
pub const EXIT_CLAIM_FAILED: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),

    #[error("{0}")]
    Io(String),

    #[error("{0}")]
    Diverged(String),

    #[error("{0}")]
    ClaimFailed(String),
}

impl CliError {
    pub fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{}: {err}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Io(_) => EXIT_IO,
            CliError::Diverged(_) => EXIT_DIVERGED,
            CliError::ClaimFailed(_) => EXIT_CLAIM_FAILED,
        }
    }
}

impl From<isectreg_core::Error> for CliError {
    fn from(err: isectreg_core::Error) -> Self {
        use isectreg_core::Error as E;
        match err {
            E::InvalidArgument(msg) => CliError::Validation(msg),
            E::Diverged { .. } => CliError::Diverged(err.to_string()),
            E::Io(e) => CliError::Io(e.to_string()),
            E::Csv(e) if e.is_io_error() => CliError::Io(e.to_string()),
            E::Csv(e) => CliError::Validation(e.to_string()),
            E::Json(e) if e.is_io() => CliError::Io(e.to_string()),
            E::Json(e) => CliError::Validation(e.to_string()),
        }
    }
}

/// Like `?` on a core call, but names the file or directory on I/O errors.
pub(crate) fn at<T>(path: &Path, res: isectreg_core::Result<T>) -> Result<T, CliError> {
    res.map_err(|e| match CliError::from(e) {
        CliError::Io(msg) => CliError::Io(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub(crate) fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub(crate) fn to_json<T: Serialize + ?Sized>(value: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| CliError::Validation(format!("serializing report: {e}")))
}

pub(crate) fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), CliError> {
    std::fs::write(path, to_json(value)?).map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn core_errors_map_to_exit_codes() {
        let invalid = isectreg_core::Error::InvalidArgument("d0: bad".into());
        assert_eq!(CliError::from(invalid).exit_code(), EXIT_VALIDATION);
        let io = isectreg_core::Error::Io(std::io::Error::new(std::io::ErrorKind::NotFound, "gone"));
        assert_eq!(CliError::from(io).exit_code(), EXIT_IO);
        let diverged = isectreg_core::Error::Diverged {
            epoch: 2,
            batch: 0,
            reports: Vec::new(),
        };
        assert_eq!(CliError::from(diverged).exit_code(), EXIT_DIVERGED);
        let json = serde_json::from_str::<u32>("x").unwrap_err();
        assert_eq!(CliError::from(isectreg_core::Error::Json(json)).exit_code(), EXIT_VALIDATION);
    }
}
