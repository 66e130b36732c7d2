use std::path::{Path, PathBuf};

use mixgop_core::ErrorClass;
use serde::Serialize;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(mixgop_core::Error),
    Io { path: PathBuf, source: std::io::Error },
    MissingFile(PathBuf),
}

/// Machine-readable error record written to stderr on failure.
#[derive(Debug, Serialize)]
pub struct ErrorReport {
    pub error: String,
    pub message: String,
    pub exit_code: i32,
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 1 usage, 2 data or model, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(e) => match e.class() {
                ErrorClass::Config => 1,
                ErrorClass::Data => 2,
                ErrorClass::Numerical => 3,
            },
            CliError::Io { .. } | CliError::MissingFile(_) => 2,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "UsageError",
            CliError::Core(e) => e.kind(),
            CliError::Io { .. } => "Io",
            CliError::MissingFile(_) => "MissingFile",
        }
    }

    pub fn report(&self) -> ErrorReport {
        ErrorReport {
            error: self.kind().to_string(),
            message: self.to_string(),
            exit_code: self.exit_code(),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io { path, source } => write!(f, "{}: {source}", path.display()),
            CliError::MissingFile(p) => write!(f, "{} does not exist", p.display()),
        }
    }
}

impl std::error::Error for CliError {}

impl From<mixgop_core::Error> for CliError {
    fn from(e: mixgop_core::Error) -> Self {
        CliError::Core(e)
    }
}
