use std::path::PathBuf;

/// Process exit codes.
pub mod exit {
    pub const OK: u8 = 0;
    pub const USAGE: u8 = 1;
    pub const CONFIG: u8 = 2;
    pub const NUMERICAL: u8 = 3;
    pub const GRADCHECK: u8 = 4;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{failed} of {total} gradient checks failed")]
    GradcheckFailed { failed: usize, total: usize },

    #[error(transparent)]
    Core(#[from] metasaclag::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => exit::USAGE,
            CliError::Config(_) | CliError::Io { .. } => exit::CONFIG,
            CliError::GradcheckFailed { .. } => exit::GRADCHECK,
            CliError::Core(metasaclag::Error::NonFinite(_)) => exit::NUMERICAL,
            CliError::Core(_) => exit::CONFIG,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
