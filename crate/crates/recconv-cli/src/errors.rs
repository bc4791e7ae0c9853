use std::fmt;

/// CLI failure classes, mapped onto exit codes: validation and parse
/// problems exit 1, numerical-contract violations exit 2.
#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Contract(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Contract(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(msg) => write!(f, "{msg}"),
            CliError::Contract(msg) => write!(f, "{msg}"),
        }
    }
}

impl From<recconv::Error> for CliError {
    fn from(e: recconv::Error) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Validation(format!("io error: {e}"))
    }
}

pub type CliResult<T> = Result<T, CliError>;
