use std::path::PathBuf;

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] rru_core::Error),
}

impl HarnessError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps a failure while reading or decoding a dataset.
    pub fn data(err: rru_core::Error) -> Self {
        HarnessError::Data(err.to_string())
    }

    /// Process exit status: 2 for configuration problems, 3 for data problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Core(rru_core::Error::InvalidArgument(_) | rru_core::Error::Json(_)) => 2,
            HarnessError::Data(_) => 3,
            HarnessError::Core(rru_core::Error::Data(_)) => 3,
            _ => 1,
        }
    }
}
