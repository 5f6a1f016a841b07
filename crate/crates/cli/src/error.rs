//! CLI error type with process exit codes.

use std::fmt;

/// Exit codes: 0 success, 2 config error, 3 numerical failure,
/// 4 validation failure.
#[derive(Debug)]
pub enum CliError {
    /// Bad config file: syntax, schema, or invariant violations.
    Config(String),
    /// A computation failed (quadrature, overflow, invalid conditioning, IO).
    Numeric(String),
    /// The validation suite found a failing check.
    Validation(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Validation(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config error: {msg}"),
            CliError::Numeric(msg) => write!(f, "numerical failure: {msg}"),
            CliError::Validation(msg) => write!(f, "validation failure: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<paycast_core::Error> for CliError {
    fn from(e: paycast_core::Error) -> Self {
        CliError::Numeric(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Numeric(format!("io: {e}"))
    }
}

pub type CliResult<T> = Result<T, CliError>;
