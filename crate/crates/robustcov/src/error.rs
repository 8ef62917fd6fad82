use std::path::PathBuf;

/// Exit code for success.
pub const EXIT_OK: i32 = 0;
/// Exit code for invalid input, configuration or IO problems.
pub const EXIT_VALIDATION: i32 = 2;
/// Exit code for numerical failures (non-convergence and the like).
pub const EXIT_NUMERIC: i32 = 3;

/// Everything the command layer can fail with.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Error from the numerical core.
    #[error(transparent)]
    Core(#[from] robustcov_core::Error),
    /// Malformed JSON.
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        /// 1-based line.
        line: usize,
        /// 1-based column.
        column: usize,
        /// What went wrong.
        message: String,
    },
    /// Well-formed but invalid input, with the offending field.
    #[error("invalid input at '{field}': {message}")]
    Input {
        /// Path of the field, e.g. `blocks[1].covariance`.
        field: String,
        /// What went wrong.
        message: String,
    },
    /// Reading or writing a file.
    #[error("{}: {source}", path.display())]
    Io {
        /// File involved.
        path: PathBuf,
        /// Underlying error.
        source: std::io::Error,
    },
    /// Writing CSV output.
    #[error("writing CSV: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub(crate) fn input(field: impl Into<String>, message: impl std::fmt::Display) -> Self {
        CliError::Input {
            field: field.into(),
            message: message.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: [`EXIT_NUMERIC`] for numerical failures, otherwise
    /// [`EXIT_VALIDATION`].
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_numeric() => EXIT_NUMERIC,
            _ => EXIT_VALIDATION,
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }
    }
}
