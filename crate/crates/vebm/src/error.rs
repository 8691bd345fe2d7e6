//! Crate-wide error type.
//!
//! Every fallible operation returns [`Error`]. The variants are grouped so the
//! command-line frontend can map them onto distinct exit codes: configuration
//! problems, I/O and file-format problems, and sampler divergence are reported
//! separately from everything else.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or graph shape mismatch detected while building or running a graph.
    #[error("shape error: {0}")]
    Shape(String),

    /// A graph leaf was evaluated without a bound value.
    #[error("unbound leaf: {0}")]
    Unbound(String),

    /// An op produced NaN or Inf; the graph refuses to propagate it.
    #[error("non-finite value produced by node {node} ({detail})")]
    NonFinite { node: usize, detail: String },

    /// Langevin dynamics left the plausible value range or went non-finite.
    #[error("langevin divergence at step {step}: max |voxel| = {max_abs}")]
    Divergence { step: usize, max_abs: f32 },

    /// Invalid run configuration (bad field value, unknown preset, ...).
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed binary or JSON artifact (voxel grid file, checkpoint, mesh).
    #[error("format error: {0}")]
    Format(String),

    /// Invalid data passed to a dataset, metric, or evaluation routine.
    #[error("data error: {0}")]
    Data(String),
}

impl Error {
    /// Process exit code for the CLI: configuration 2, I/O and formats 3,
    /// divergence 4, everything else 1.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Io(_) | Error::Format(_) => 3,
            Error::Divergence { .. } => 4,
            _ => 1,
        }
    }
}
