//! Crate-wide error type and the process exit codes derived from it.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config: {0}")]
    Config(String),

    #[error("unknown device id `{0}` (expected S1..S6 or D1..D6)")]
    UnknownDevice(String),

    #[error("overmodulation: m_d = {md:.4} exceeds 1.0 (v_g_amp too large for v_dc/2)")]
    Overmodulation { md: f64 },

    #[error(
        "simulation did not reach steady state: cycle-to-cycle RMS current change \
         {residual:.3e} A exceeds {limit:.1e} A (increase settle_cycles)"
    )]
    NonConvergent { residual: f64, limit: f64 },

    #[error("spectrum mismatch: {0}")]
    SpectrumMismatch(String),

    #[error("order {0} missing from spectrum")]
    MissingOrder(u32),

    #[error("trace too short: need {need} samples, have {have}")]
    TraceTooShort { need: usize, have: usize },

    #[error("all model sensitivities are zero for the requested orders")]
    ZeroSensitivity,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("parse {path}: {msg}")]
    Parse { path: PathBuf, msg: String },
}

impl Error {
    /// Exit code for the CLI: 1 for usage/config/file problems, 2 for
    /// numerical or convergence failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::UnknownDevice(_)
            | Error::SpectrumMismatch(_)
            | Error::MissingOrder(_)
            | Error::TraceTooShort { .. }
            | Error::Io { .. }
            | Error::Parse { .. } => 1,
            Error::Overmodulation { .. }
            | Error::NonConvergent { .. }
            | Error::ZeroSensitivity => 2,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
