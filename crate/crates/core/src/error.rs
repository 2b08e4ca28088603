use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    Shape(String),

    #[error("tensor with n={n}, k={k} exceeds the element cap of {cap}")]
    SizeCap { n: usize, k: usize, cap: usize },

    #[error("axis {axis} out of range for a rank-{rank} tensor (axes are 1-based)")]
    Axis { axis: usize, rank: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value in {what} at flat index {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("row {point} of view {view} has norm {norm}, expected unit norm")]
    NotUnitNorm { view: usize, point: usize, norm: f64 },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("malformed {format} header: {reason}")]
    Header { format: &'static str, reason: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("loss became non-finite at step {step}")]
    Diverged {
        step: usize,
        /// Last state whose loss was finite.
        last_finite: Box<ndarray::Array3<f64>>,
    },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerics (NaN losses, divergence) as opposed
    /// to malformed inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical(_) | Error::Diverged { .. })
    }

    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
