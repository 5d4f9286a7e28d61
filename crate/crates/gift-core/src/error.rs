//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller handed in vectors whose widths do not agree with the contract.
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// A non-finite value showed up where only finite values are allowed.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// Environment state left the finite range during integration or rollout.
    #[error("state diverged to non-finite at step {step}")]
    Diverged { step: usize },

    /// A configuration value failed validation.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// Reference generation found no finite candidate rollout.
    #[error("all {0} candidate rollouts diverged; no valid reference trajectory")]
    NoValidReference(usize),

    /// A statistic was asked for on too small a sample.
    #[error("too few samples: got {got}, need at least {need}")]
    TooFewSamples { got: usize, need: usize },

    /// A persisted artifact is truncated or otherwise unreadable.
    #[error("corrupt artifact {path}: {detail}")]
    CorruptArtifact { path: String, detail: String },

    /// A persisted artifact was written by an incompatible format version.
    #[error("format version mismatch in {path}: found {found}, expected {expected}")]
    VersionMismatch {
        path: String,
        found: u32,
        expected: u32,
    },

    /// A checkpoint from one pipeline phase was loaded where another was expected.
    #[error("checkpoint phase mismatch: found `{found}`, expected `{expected}` (pass an explicit override to accept)")]
    PhaseMismatch { found: String, expected: String },

    /// A pipeline stage failed; the phase name travels with the error.
    #[error("phase `{phase}` failed: {source}")]
    PhaseFailed {
        phase: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn phase(self, phase: &'static str) -> Self {
        Error::PhaseFailed {
            phase,
            source: Box::new(self),
        }
    }
}
