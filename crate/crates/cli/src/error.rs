use std::fmt;

/// Exit status classes: usage 2, validation 3, runtime 4.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Validation(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Validation(_) => 3,
            CliError::Runtime(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Validation(m) => write!(f, "invalid input: {m}"),
            CliError::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<wsol::Error> for CliError {
    fn from(e: wsol::Error) -> Self {
        if e.is_validation() {
            CliError::Validation(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn runtime(context: impl fmt::Display, e: impl fmt::Display) -> CliError {
    CliError::Runtime(format!("{context}: {e}"))
}
