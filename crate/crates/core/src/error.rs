use std::path::PathBuf;

use thiserror::Error;

/// An invalid parameter, reported with the name of the offending field.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid `{field}`: {reason}")]
pub struct ConfigError {
    pub field: String,
    pub reason: String,
}

impl ConfigError {
    pub fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self { field: field.into(), reason: reason.into() }
    }
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot read spec file {path}: {source}")]
    ReadSpec { path: PathBuf, source: std::io::Error },
    #[error("malformed spec file: {0}")]
    ParseSpec(String),
    #[error("cannot write output {path}: {source}")]
    Output { path: PathBuf, source: std::io::Error },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("worker pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("heuristic fit needs at least 4 sweep points, got {0}")]
    TooFewPoints(usize),
    #[error("sweep does not vary M * tau_u")]
    Degenerate,
    #[error("non-positive value in sweep point {0}")]
    NonPositive(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SicError {
    #[error("interference cancellation still progressing after {0} iterations")]
    NotConverged(usize),
}
