use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    /// A parameter outside its mathematical domain (e.g. `alpha <= 1`).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("length mismatch: {left} predictions vs {right} targets")]
    LengthMismatch { left: usize, right: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("representation mismatch: {0}")]
    Representation(&'static str),

    #[error("training diverged at epoch {epoch}: {detail}")]
    Divergence { epoch: usize, detail: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unsupported log version {found} (this build reads version {expected})")]
    Version { found: u32, expected: u32 },

    #[error("malformed log header: {0}")]
    Header(String),

    #[error("malformed record {index}: {detail}")]
    Parse { index: usize, detail: String },

    #[error("duplicate record id {0}")]
    DuplicateId(u64),

    #[error("missing artifact: {}", .0.display())]
    MissingArtifact(PathBuf),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
