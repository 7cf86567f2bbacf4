//! Experiment drivers behind the `gpae-lab` command line (see the `gpae-cli` package).
//!
//! * [`verify`]: oracle certificates for the operator and estimator identities.
//! * [`compare`]: trace-truncation gap statistics across schemes and seeds.
//! * [`gap`]: the advantage-gap diagnostic on the anomaly model.
//! * [`learning`]: the learning-ordering experiment on `chain_gather`.
//! * [`commands`]: config loading and file output for each subcommand.

pub mod commands;
pub mod compare;
pub mod gap;
pub mod learning;
pub mod output;
pub mod verify;

use std::path::Path;

use gpae_core::approx::ApproxError;
use gpae_core::correction::CorrectionError;
use gpae_core::env::{make_builtin, Builtin, BuiltinParams, EnvError};
use gpae_core::estimators::EstimatorError;
use gpae_core::oracle::OracleError;
use gpae_core::trainer::TrainError;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("config {path}: {message}")]
    Config { path: String, message: String },
    #[error("usage: {0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Correction(#[from] CorrectionError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Approx(#[from] ApproxError),
}

impl LabError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.display().to_string(), source }
    }

    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Config { path: path.into(), message: message.into() }
    }

    /// 2 for usage and config errors, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config { .. } | Self::Usage(_) => 2,
            Self::Train(TrainError::InvalidConfig { .. }) => 2,
            _ => 1,
        }
    }
}

/// Reads a JSON config, or returns the defaults when no path is given.
/// Parse errors carry the line, column and offending field.
pub fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, LabError> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| LabError::config(path.display().to_string(), e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| LabError::config(path.display().to_string(), e.to_string()))
}

/// A built-in model name with optional parameter overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    #[serde(default)]
    pub params: BuiltinParams,
}

impl ModelSpec {
    pub fn new(name: &str) -> Self {
        Self { name: name.into(), params: BuiltinParams::default() }
    }

    pub fn with(name: &str, params: BuiltinParams) -> Self {
        Self { name: name.into(), params }
    }

    pub fn build(&self) -> Result<Builtin, LabError> {
        Ok(make_builtin(&self.name, &self.params)?)
    }
}

/// Maps `f` over seeds in parallel, keeping seed order in the result.
pub fn map_seeds<T, F>(seeds: std::ops::Range<u64>, f: F) -> Result<Vec<T>, LabError>
where
    T: Send,
    F: Fn(u64) -> Result<T, LabError> + Sync + Send,
{
    seeds.into_par_iter().map(f).collect()
}

/// Result of running one subcommand.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    /// Whether every checked claim held.
    pub passed: bool,
    /// Files written, relative to the output directory.
    pub files: Vec<String>,
    /// One human-readable line per claim or result.
    pub lines: Vec<String>,
}

impl RunSummary {
    pub fn exit_code(&self) -> i32 {
        if self.passed {
            0
        } else {
            1
        }
    }
}
