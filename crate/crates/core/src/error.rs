//! Crate-wide error type and exit-code mapping.

use std::path::PathBuf;

use thiserror::Error;

/// Everything that can go wrong across loading, training, and inference.
#[derive(Debug, Error)]
pub enum Error {
    /// Underlying I/O failure, annotated with the path that caused it.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A file violated its format; `line` is 1-based (0 for binary offsets).
    #[error("{path}:{line}: {msg}")]
    Format {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    /// Inputs are structurally inconsistent (dims, index ranges, counts).
    #[error("invalid data: {0}")]
    Data(String),

    /// A configuration value is out of range or incoherent.
    #[error("invalid config: {0}")]
    Config(String),

    /// A computation produced non-finite values or exceeded a numeric gate.
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl Error {
    /// Attach path context to a raw I/O error.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Format violation at a specific line of `path`.
    pub fn format(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }

    /// Process exit code for the CLI: data problems exit 2, numeric
    /// failures exit 3. Usage errors (exit 1) are raised by argument
    /// parsing before an `Error` ever exists.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric(_) => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_error_class() {
        assert_eq!(Error::Data("x".into()).exit_code(), 2);
        assert_eq!(Error::Config("x".into()).exit_code(), 2);
        assert_eq!(Error::format("f", 3, "bad").exit_code(), 2);
        assert_eq!(Error::Numeric("nan".into()).exit_code(), 3);
    }

    #[test]
    fn format_error_displays_path_and_line() {
        let e = Error::format("data/gt.txt", 12, "label index out of range");
        assert_eq!(e.to_string(), "data/gt.txt:12: label index out of range");
    }
}
