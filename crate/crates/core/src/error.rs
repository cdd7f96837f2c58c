use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the engine can surface. Variants line up with the CLI exit
/// codes (see [`Error::exit_code`]).
#[derive(Debug, Error)]
pub enum Error {
    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("linear algebra error: {0}")]
    LinAlg(String),

    #[error("stability error: spectral radius {spectral_radius:.6} is not below 1")]
    Stability { spectral_radius: f64 },

    #[error("non-finite sampler state at iteration {iteration}: {detail}")]
    NonFinite { iteration: usize, detail: String },

    #[error("{path}: {count} problem(s):\n{}", .messages.join("\n"))]
    Parse {
        path: PathBuf,
        count: usize,
        messages: Vec<String>,
    },

    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("artifact mismatch: {0}")]
    ArtifactMismatch(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, messages: Vec<String>) -> Self {
        Error::Parse {
            path: path.into(),
            count: messages.len(),
            messages,
        }
    }

    /// Process exit code for the command-line front end:
    /// 2 input, 3 artifact mismatch, 4 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::Parse { .. } | Error::Geometry(_) | Error::Config(_) => 2,
            Error::Domain(_) => 2,
            Error::ArtifactMismatch(_) => 3,
            Error::LinAlg(_) | Error::Stability { .. } | Error::NonFinite { .. } => 4,
        }
    }
}
