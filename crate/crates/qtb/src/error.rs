use std::path::PathBuf;

use thiserror::Error;

/// Process exit code for configuration and input-file errors.
pub const EXIT_CONFIG: i32 = 2;
/// Process exit code for errors raised while analyzing valid input.
pub const EXIT_ANALYSIS: i32 = 3;

/// Errors surfaced by the file formats and commands.
#[derive(Debug, Error)]
pub enum QtbError {
    /// Schema or value error in a configuration document; `path` is the
    /// dotted field path (`pump.mu`, `detectors.A1.efficiency`).
    #[error("{file}: {path}: {message}")]
    Config { file: String, path: String, message: String },

    /// Malformed input file.
    #[error("{file}: line {line}: {message}")]
    Format { file: String, line: u64, message: String },

    /// Bad command-line value.
    #[error("{0}")]
    Usage(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Error from a model or estimator, tagged with its module.
    #[error("{module}: {source}")]
    Analysis {
        module: &'static str,
        #[source]
        source: qtb_core::Error,
    },
}

impl QtbError {
    pub fn exit_code(&self) -> i32 {
        match self {
            QtbError::Analysis { source, .. } if !source.is_config() => EXIT_ANALYSIS,
            _ => EXIT_CONFIG,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        QtbError::Io { path: path.into(), source }
    }

    pub fn format(file: impl std::fmt::Display, line: u64, message: impl Into<String>) -> Self {
        QtbError::Format { file: file.to_string(), line, message: message.into() }
    }

    pub fn config(file: impl std::fmt::Display, path: impl Into<String>, message: impl Into<String>) -> Self {
        QtbError::Config { file: file.to_string(), path: path.into(), message: message.into() }
    }
}

/// Tags core errors with the module that raised them.
pub trait InModule<T> {
    fn in_module(self, module: &'static str) -> Result<T>;
}

impl<T> InModule<T> for qtb_core::Result<T> {
    fn in_module(self, module: &'static str) -> Result<T> {
        self.map_err(|source| QtbError::Analysis { module, source })
    }
}

pub type Result<T, E = QtbError> = std::result::Result<T, E>;
