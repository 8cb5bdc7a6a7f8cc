use std::fmt;

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CORRUPT_CHECKPOINT: i32 = 3;
pub const EXIT_MISSING_STANDARDIZER: i32 = 4;

/// An error with the process exit code it maps to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(EXIT_USAGE, message)
    }

    pub fn failure(message: impl Into<String>) -> Self {
        Self::new(EXIT_FAILURE, message)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<dtsemnet::Error> for CliError {
    fn from(e: dtsemnet::Error) -> Self {
        use dtsemnet::Error as E;
        let code = match &e {
            E::InvalidArgument(_) | E::Parse { .. } | E::Encode(_) | E::Split(_) | E::Json(_) => {
                EXIT_USAGE
            }
            E::CorruptCheckpoint(_) => EXIT_CORRUPT_CHECKPOINT,
            _ => EXIT_FAILURE,
        };
        Self::new(code, e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::failure(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
