use std::path::PathBuf;

use thiserror::Error;

/// Everything that can go wrong between loading a scenario and simulating a mission.
#[derive(Debug, Error)]
pub enum Error {
    #[error("state {state:?} lies outside the grid domain in dimension {dim}")]
    OutOfDomain { state: Vec<f64>, dim: usize },

    #[error("invalid {field}: {reason}")]
    Validation { field: String, reason: String },

    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("controller undefined at cell {cell} (vehicle {vehicle}, leg {leg})")]
    ControllerDomain { vehicle: usize, leg: usize, cell: usize },

    #[error("vehicle {vehicle} did not finish leg {leg} within {steps} steps")]
    Divergence { vehicle: usize, leg: usize, steps: usize },

    #[error("missing artifact {path}: run `{command}` first")]
    MissingArtifact { path: PathBuf, command: &'static str },

    #[error("stale artifact {path}: {reason}")]
    StaleArtifact { path: PathBuf, reason: String },

    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },

    #[error("unknown {kind} `{name}` (available: {available})")]
    UnknownStrategy { kind: &'static str, name: String, available: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation { field: field.into(), reason: reason.into() }
    }

    pub fn format(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Format { what, reason: reason.into() }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Infeasible(_) => 2,
            Error::Validation { .. } | Error::Parse { .. } | Error::UnknownStrategy { .. } => 3,
            Error::Numerical(_)
            | Error::ControllerDomain { .. }
            | Error::Divergence { .. }
            | Error::OutOfDomain { .. } => 4,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
