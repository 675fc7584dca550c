use thiserror::Error;

pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;
pub const EXIT_NONE_VERIFIED: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration or input files, detected before any work starts.
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }

    /// Errors from reading inputs count as validation failures.
    pub fn input(err: embverify::Error) -> Self {
        use embverify::Error as E;
        match err {
            E::Config { key, message } => CliError::Validation(format!("config key `{key}`: {message}")),
            E::Parse { line, message } => CliError::Validation(format!("config line {line}: {message}")),
            e @ (E::MalformedFile { .. }
            | E::NonFiniteValue { .. }
            | E::DuplicateId(_)
            | E::Io { .. }
            | E::DimMismatch { .. }
            | E::BadSpec(_)) => CliError::Validation(e.to_string()),
            e => CliError::Runtime(e.to_string()),
        }
    }

    pub fn config(key: &str, message: impl std::fmt::Display) -> Self {
        CliError::Validation(format!("config key `{key}`: {message}"))
    }
}

/// Module errors raised while a command is running.
impl From<embverify::Error> for CliError {
    fn from(err: embverify::Error) -> Self {
        CliError::Runtime(err.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
