//! Exit-code policy and the machine-readable error envelope.
//!
//! Exit codes: 0 ok, 2 usage, 3 input error, 4 numerical failure.

use mhmmx::Error as LibError;
use serde::Serialize;

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_INPUT: u8 = 3;
pub const EXIT_NUMERICAL: u8 = 4;

#[derive(Debug, Serialize)]
pub struct CliError {
    pub error: String,
    pub exit_code: u8,
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError {
            error: msg.into(),
            exit_code: EXIT_USAGE,
        }
    }

    pub fn input(msg: impl Into<String>) -> Self {
        CliError {
            error: msg.into(),
            exit_code: EXIT_INPUT,
        }
    }

}

impl From<LibError> for CliError {
    fn from(e: LibError) -> Self {
        let code = match &e {
            LibError::NonFinite(_)
            | LibError::OptimizationFailed(_)
            | LibError::ExcessiveDivergences { .. } => EXIT_NUMERICAL,
            _ => EXIT_INPUT,
        };
        CliError {
            error: e.to_string(),
            exit_code: code,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
