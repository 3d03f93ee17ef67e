use std::path::PathBuf;

use consensus_core::ErrorKind;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config {path}: {message}")]
    Config { path: String, message: String },

    #[error("{module}: {source}")]
    Core {
        module: &'static str,
        #[source]
        source: consensus_core::Error,
    },

    #[error("non-finite value in `{field}`")]
    NonFinite { field: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Data { path: PathBuf, message: String },
}

impl CliError {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// 0 success, 2 configuration, 3 connectivity, 4 numerical, 5 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } | CliError::Data { .. } => 2,
            CliError::Core { source, .. } => match source.kind() {
                ErrorKind::Configuration => 2,
                ErrorKind::Connectivity => 3,
                ErrorKind::Numerical => 4,
            },
            CliError::NonFinite { .. } => 4,
            CliError::Io { .. } => 5,
        }
    }
}

/// Tags a core error with the module that raised it.
pub(crate) trait InModule<T> {
    fn in_module(self, module: &'static str) -> Result<T, CliError>;
}

impl<T> InModule<T> for consensus_core::Result<T> {
    fn in_module(self, module: &'static str) -> Result<T, CliError> {
        self.map_err(|source| CliError::Core { module, source })
    }
}
