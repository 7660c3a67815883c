//! CLI failures and their exit codes.

use std::fmt::Display;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("minimizer did not converge: {0}")]
    NotConverged(String),

    #[error("variational inequality not certified: {0}")]
    Vi(String),

    #[error("output error: {0}")]
    Output(String),
}

impl CliError {
    pub fn config(e: impl Display) -> Self {
        CliError::Config(e.to_string())
    }

    pub fn output(e: impl Display) -> Self {
        CliError::Output(e.to_string())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Output(_) => 1,
            CliError::Config(_) => 2,
            CliError::Solver(_) => 3,
            CliError::Validation(_) => 4,
            CliError::NotConverged(_) => 5,
            CliError::Vi(_) => 6,
        }
    }
}

impl From<memsim_core::Error> for CliError {
    fn from(e: memsim_core::Error) -> Self {
        use memsim_core::Error as E;
        match e {
            E::NoConvergence { .. } | E::DegenerateGap(_) | E::NotSolved | E::TraceMismatch => {
                CliError::Solver(e.to_string())
            }
            E::Io(_) | E::Csv(_) => CliError::Output(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn core_errors_are_classified() {
        let e: CliError = memsim_core::Error::NoConvergence {
            iterations: 3,
            residual: 1.0,
        }
        .into();
        assert_eq!(e.exit_code(), 3);
        let e: CliError = memsim_core::Error::BcMismatch("x".into()).into();
        assert_eq!(e.exit_code(), 2);
        let e: CliError = memsim_core::Error::ProfileFormat("x".into()).into();
        assert_eq!(e.exit_code(), 2);
    }
}
