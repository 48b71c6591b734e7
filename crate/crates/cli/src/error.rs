// SPDX-License-Identifier: MIT OR Apache-2.0

use std::fmt;

use attriprobe::Error;

/// Failure classes, each with its own exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, flag combinations or configuration values.
    Usage(String),
    /// Unreadable, malformed or unsuitable input data.
    Data(String),
    /// Optimization or statistics that could not produce a finite answer.
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numeric(m) => write!(f, "numeric error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig(_) => CliError::Usage(e.to_string()),
            Error::Numeric(_) | Error::UndefinedRelativeRisk(_) => CliError::Numeric(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(format!("I/O error: {e}"))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(format!("JSON error: {e}"))
    }
}

pub type CliResult<T> = Result<T, CliError>;
