//! Process-level error split: configuration and file-content problems exit
//! with code 1, filesystem failures with code 2.

use std::fmt;
use std::path::Path;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, bad config keys or values, or files whose contents
    /// violate their schema. Exit code 1.
    Validation(String),
    /// The operating system refused a read or write. Exit code 2.
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Io(_) => 2,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Io(m) => m,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.message())
    }
}

impl std::error::Error for CliError {}

impl From<lmcl_core::Error> for CliError {
    fn from(e: lmcl_core::Error) -> Self {
        CliError::Validation(e.to_string())
    }
}

pub fn io_error(action: &str, path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("cannot {action} {}: {e}", path.display()))
}

pub fn validation(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}
