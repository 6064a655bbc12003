use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config {path}: {message}")]
    Config { path: String, message: String },

    #[error(transparent)]
    Model(#[from] cascade_core::Error),

    #[error("bracket certificate failed: rank {achieved} of {required} within depth {max_m}")]
    CertificateFailed {
        achieved: usize,
        required: usize,
        max_m: usize,
    },

    #[error("thread pool: {0}")]
    ThreadPool(String),
}

impl CliError {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status: 2 integrator blow-up, 3 insufficient samples,
    /// 4 certificate failure, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        use cascade_core::Error as E;
        match self {
            Self::Model(E::NonFinite { .. } | E::ClampExceeded { .. }) => 2,
            Self::Model(E::InsufficientSamples(_)) => 3,
            Self::CertificateFailed { .. } => 4,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
