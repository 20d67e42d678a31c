use thiserror::Error;

/// Errors raised by hessian-forge operations.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Input failed a precondition (shape, range, sign).
    #[error("validation error: {0}")]
    Validation(String),

    /// A matrix that must be Hermitian is not, beyond the relative tolerance.
    #[error("matrix is not Hermitian: max asymmetry {asymmetry:e} exceeds {tolerance:e}")]
    NotHermitian { asymmetry: f64, tolerance: f64 },

    /// An eigenvalue vector lies outside the cone on which a function is defined.
    #[error("point outside cone {cone}: {violated}")]
    Domain { cone: String, violated: String },

    /// Metric is not positive definite at a node.
    #[error("metric not positive definite at node {node}")]
    MetricNotPositive { node: usize },

    /// Iterate left the admissible cone at the listed nodes.
    #[error("admissibility violated at {} node(s), first {:?}", .nodes.len(), .nodes.first())]
    Admissibility { nodes: Vec<usize> },

    /// The subsolution condition cannot be met.
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// Linear solve failed (singular pivot or Krylov stagnation).
    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    /// Nonlinear iteration did not reach its tolerance.
    #[error("non-convergence: {0}")]
    NonConvergence(String),

    /// Configuration file problems; every violation is listed.
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
