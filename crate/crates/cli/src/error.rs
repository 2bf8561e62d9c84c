use std::path::PathBuf;

use beampred::ErrorKind;

/// Process exit codes. Usage errors are reported by clap with code 2.
pub mod exit {
    pub const OK: u8 = 0;
    pub const USAGE: u8 = 2;
    pub const CONFIG: u8 = 3;
    pub const IO: u8 = 4;
    pub const CONTRACT: u8 = 5;
    pub const NUMERICAL: u8 = 6;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] beampred::Error),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("refusing to overwrite existing output {0}")]
    Exists(PathBuf),
    #[error("contract violation: {0}")]
    Contract(String),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) => match e.kind() {
                ErrorKind::Config => exit::CONFIG,
                ErrorKind::Io => exit::IO,
                ErrorKind::Contract => exit::CONTRACT,
                ErrorKind::Numerical => exit::NUMERICAL,
            },
            CliError::Config(_) => exit::CONFIG,
            CliError::Io { .. } | CliError::Exists(_) => exit::IO,
            CliError::Contract(_) => exit::CONTRACT,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
