//! Error type shared by all modules of the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpinError {
    #[error("tensor rank {0} exceeds the supported maximum of {max}", max = crate::tensor::MAX_RANK)]
    RankOverflow(usize),

    #[error("index {index} out of range for slot of dimension 8")]
    IndexOutOfRange { index: usize },

    #[error("slot {slot} out of range for rank-{rank} tensor")]
    SlotOutOfRange { slot: usize, rank: usize },

    #[error("rank mismatch: expected {expected}, got {got}")]
    RankMismatch { expected: usize, got: usize },

    #[error("operation requires rank >= {required}, got {got}")]
    RankTooSmall { required: usize, got: usize },

    #[error("input tensor is not antisymmetric (relative deviation {deviation:.3e})")]
    NotAntisymmetric { deviation: f64 },

    #[error("matrix is singular or not positive definite")]
    NotPositiveDefinite,

    #[error("transport matrix must be invertible and orientation preserving (det = {det:.6e})")]
    BadTransport { det: f64 },

    #[error("4-form is not admissible: {reason} (residual {residual:.3e})")]
    NotAdmissible { reason: &'static str, residual: f64 },

    #[error("4-form has a nonzero 27-component (relative residual {residual:.3e})")]
    NotInDiamondImage { residual: f64 },

    #[error("numerically ambiguous rank: singular-value gap {gap:.3e} below {threshold:.1e}")]
    RankAmbiguous { gap: f64, threshold: f64 },

    #[error("admissibility drift {residual:.3e} exceeds threshold {threshold:.3e} at step {step}")]
    DriftExceeded { residual: f64, threshold: f64, step: usize },

    #[error("symbol maps require a nonzero covector")]
    ZeroCovector,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SpinError>;
