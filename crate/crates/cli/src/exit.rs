use std::fmt;

use nlwave::Error;

pub const OK: u8 = 0;
pub const USAGE: u8 = 1;
pub const PRECONDITION: u8 = 2;
pub const NUMERICAL: u8 = 3;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, unreadable or malformed config, unwritable output.
    Usage(String),
    Core(Error),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => USAGE,
            CliError::Core(e) => core_code(e),
        }
    }
}

fn core_code(e: &Error) -> u8 {
    match e {
        Error::InvalidParams(_) | Error::InvalidKernel(_) | Error::Io(_) => USAGE,
        Error::Domain(_)
        | Error::DivergentMoment { .. }
        | Error::UnsupportedKernel(_)
        | Error::UnboundedMinimizer { .. }
        | Error::NoRoots { .. }
        | Error::Precondition(_)
        | Error::AssumptionViolation(_)
        | Error::Construction(_)
        | Error::StepTooLarge { .. } => PRECONDITION,
        Error::NumericalFailure(_)
        | Error::Internal(_)
        | Error::NonConvergence { .. }
        | Error::DomainTooSmall { .. }
        | Error::Normalization(_)
        | Error::Window(_)
        | Error::InsufficientHistory { .. }
        | Error::BlowUp { .. } => NUMERICAL,
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Usage(e.to_string())
    }
}
