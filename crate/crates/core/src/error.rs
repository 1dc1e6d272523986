use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("arity mismatch: map of order {order} evaluated on {got} arguments")]
    ArityMismatch { order: usize, got: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("unsupported mode: {0}")]
    Unsupported(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("no convergence: {0}")]
    NoConvergence(String),

    #[error("outside the rigidity neighborhood: {0}")]
    OutsideNeighborhood(String),

    #[error("linear algebra failure: {0}")]
    LinAlg(String),

    #[error("invalid token: {0}")]
    InvalidToken(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
