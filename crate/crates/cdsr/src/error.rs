//! Crate-wide error type.
//!
//! Contract violations inside recorded expressions (shape mismatches,
//! non-scalar losses) panic with a message naming the offending op;
//! everything recoverable — bad configs, malformed input files, failed
//! verification checks, numeric divergence — flows through [`Error`].

/// Errors surfaced by data loading, configuration, training and verification.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid configuration value or unknown key.
    #[error("{0}")]
    Config(String),

    /// Malformed input file; carries the 1-based line number.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// A verification check did not hold.
    #[error("check failed: {0}")]
    CheckFailed(String),

    /// Training produced a non-finite loss.
    #[error("non-finite loss in phase {phase} at step {step}")]
    Divergence { phase: u8, step: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 1 usage/config, 2 check failure,
    /// 3 numeric divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Parse { .. } | Error::Io(_) => 1,
            Error::CheckFailed(_) => 2,
            Error::Divergence { .. } => 3,
        }
    }
}
