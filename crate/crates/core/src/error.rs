use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("matrix is not positive definite (min eigenvalue {0:e})")]
    NotPositiveDefinite(f64),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("newton inversion did not converge (t={t}, y={y}, eps={eps})")]
    NoConvergence { t: f64, y: f64, eps: f64 },

    #[error("integration produced a non-finite state at step {step}")]
    Integration { step: usize },

    #[error("training diverged at epoch {epoch}")]
    Diverged {
        epoch: usize,
        log: Box<crate::train::TrainLog>,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
