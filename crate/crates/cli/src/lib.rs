//! Command-line front end for the enhancement engine.
//!
//! Commands return a [`CliError`] whose [`CliError::exit_code`] follows the
//! fixed contract: 0 success, 1 self-test failure, 2 bad input, 3 numeric
//! abort.

pub mod commands;
pub mod config;
pub mod selftest;

pub use commands::{cmd_enhance, cmd_metrics, EnhanceOptions, EnhanceSummary, MetricsOptions};
pub use config::{EngineConfig, PredictorKind};
pub use selftest::{cmd_selftest, CheckOutcome, Profile, SelftestReport};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Numeric(String),
    #[error("{0}")]
    TestFailure(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::TestFailure(_) => 1,
            CliError::Input(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<enhance_core::Error> for CliError {
    fn from(e: enhance_core::Error) -> Self {
        match e {
            enhance_core::Error::NonFinite { .. } => CliError::Numeric(e.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}
