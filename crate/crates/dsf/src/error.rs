use std::path::PathBuf;

use dsf_core::DsfError;

/// Process exit status for each failure class.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitStatus {
    Success = 0,
    Config = 2,
    Data = 3,
    Numerical = 4,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error(transparent)]
    Core(#[from] DsfError),
}

impl Error {
    pub fn exit_status(&self) -> ExitStatus {
        match self {
            Error::Config(_) | Error::Parse { .. } => ExitStatus::Config,
            Error::Data(_) | Error::Io { .. } | Error::Wav { .. } => ExitStatus::Data,
            Error::Numerical(_) => ExitStatus::Numerical,
            Error::Core(e) => core_status(e),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

fn core_status(e: &DsfError) -> ExitStatus {
    use DsfError::*;
    match e {
        Config(_) | TooManySources { .. } => ExitStatus::Config,
        NonFiniteCost { .. } | NonFiniteGradient { .. } | EigenNoConvergence { .. } | ProjectionDegenerate => {
            ExitStatus::Numerical
        }
        _ => ExitStatus::Data,
    }
}

pub type Result<T> = std::result::Result<T, Error>;
