use std::fmt;
use std::path::{Path, PathBuf};

use serde::Serialize;

/// Failure reported to the caller as one JSON line on stderr, exit code 1.
#[derive(Debug, Serialize)]
pub struct CliError {
    pub error: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
}

impl CliError {
    pub fn new(kind: &'static str, message: impl Into<String>) -> Self {
        Self { error: kind, message: message.into(), path: None }
    }

    pub fn at(kind: &'static str, path: &Path, message: impl Into<String>) -> Self {
        Self { error: kind, message: message.into(), path: Some(path.display().to_string()) }
    }

    pub fn missing(path: &Path) -> Self {
        Self::at("missing_input", path, format!("input file not found: {}", path.display()))
    }

    pub fn empty(path: &Path) -> Self {
        Self::at("empty_input", path, format!("input contains no usable lines: {}", path.display()))
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).unwrap_or_else(|_| format!("{{\"error\":\"{}\"}}", self.error))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

/// Checks that `path` names an existing file.
pub fn require(path: &Path) -> Result<PathBuf, CliError> {
    if path.is_file() {
        Ok(path.to_path_buf())
    } else {
        Err(CliError::missing(path))
    }
}

/// An unreadable or malformed input file.
pub fn invalid(path: &Path, e: impl fmt::Display) -> CliError {
    CliError::at("invalid_input", path, format!("{}: {e}", path.display()))
}
