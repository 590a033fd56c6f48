//! CLI error kinds with the stable exit-code contract:
//! 0 success, 2 config error, 3 numeric divergence, 4 I/O error.

use nccl_core::CoreError;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numeric(String),
    Io(String),
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Io(_) => 4,
            CliError::Internal(_) => 1,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Config(m)
            | CliError::Numeric(m)
            | CliError::Io(m)
            | CliError::Internal(m) => m,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let kind = match self {
            CliError::Config(_) => "config error",
            CliError::Numeric(_) => "numeric divergence",
            CliError::Io(_) => "i/o error",
            CliError::Internal(_) => "error",
        };
        write!(f, "{kind}: {}", self.message())
    }
}

impl std::error::Error for CliError {}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::InvalidParameter { .. } => CliError::Config(e.to_string()),
            CoreError::NumericDivergence { .. } | CoreError::Numeric(_) => {
                CliError::Numeric(e.to_string())
            }
            other => CliError::Internal(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
