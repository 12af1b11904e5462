//! Command-line front end: simulate, fit, ODMR scans, the Rabi → T1 → echo
//! pipeline and hierarchy validation. The binary is a thin clap wrapper
//! around the functions here.

pub mod commands;
pub mod config;
mod odmr;
mod output;

use nvlab_core::coherence::HierarchyViolation;
use nvlab_core::fit::FitError;
use thiserror::Error;

pub use commands::{cmd_fit, cmd_odmr, cmd_pipeline, cmd_simulate, cmd_validate, FitOptions};
pub use config::{GridSpec, Overrides, Resolved, RunConfig};
pub use odmr::{find_dips, Dip};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("fit failed: {0}")]
    Fit(String),
    #[error("{0}")]
    Io(String),
    #[error("coherence hierarchy violated: {0}")]
    Hierarchy(HierarchyViolation),
    #[error("no ODMR dip found in {0}")]
    NoDip(String),
}

impl CliError {
    /// 0 success, 1 usage/config, 2 fit failure, 3 I/O, 4 `T1 < T2`,
    /// 5 `T2 <= T2*` (or a non-positive time), 6 no ODMR dip.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Fit(_) => 2,
            CliError::Io(_) => 3,
            CliError::Hierarchy(HierarchyViolation::T1BelowT2) => 4,
            CliError::Hierarchy(_) => 5,
            CliError::NoDip(_) => 6,
        }
    }
}

impl From<FitError> for CliError {
    fn from(e: FitError) -> Self {
        match e {
            FitError::UnknownParameter(_)
            | FitError::BadBounds(_)
            | FitError::OutOfBounds { .. }
            | FitError::NothingFree
            | FitError::WrongModel { .. }
            | FitError::UnsupportedData(_) => CliError::Config(e.to_string()),
            _ => CliError::Fit(e.to_string()),
        }
    }
}
