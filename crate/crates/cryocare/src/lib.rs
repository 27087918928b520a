//! File formats, configuration and the command-line driver for
//! [`cryocare_core`].

pub mod artifact;
pub mod cli;
pub mod config;
pub mod export;
pub mod mrc;
pub mod run;
pub mod workflow;

pub use cryocare_core as core;

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(#[from] config::ConfigError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("missing input {0}; run the stage that produces it first")]
    MissingInput(PathBuf),
    #[error("{path}: {source}")]
    Mrc { path: PathBuf, source: mrc::MrcError },
    #[error("{path}: {source}")]
    Artifact { path: PathBuf, source: artifact::ArtifactError },
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error(transparent)]
    Compute(#[from] cryocare_core::Error),
}

impl Error {
    /// Stable machine-readable category, printed with every failure.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Usage(_) => "usage",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
            Error::MissingInput(_) => "missing-input",
            Error::Mrc { .. } | Error::Artifact { .. } | Error::Format { .. } => "format",
            Error::Compute(_) => "compute",
        }
    }

    /// 2 for usage and configuration errors, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Config(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
