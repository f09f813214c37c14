use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("Jacobi iteration did not converge after {0} sweeps")]
    NoConvergence(usize),

    #[error("degenerate mirror vector (norm {0:e})")]
    DegenerateMirror(f64),

    #[error("per-head dimension must be even, got {0}")]
    OddDimension(usize),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no feasible construction after {attempts} attempts: {reason}")]
    Infeasible { attempts: usize, reason: String },

    #[error("training diverged at step {step} (loss {loss})")]
    Diverged { step: usize, loss: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
