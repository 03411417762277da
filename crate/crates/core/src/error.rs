use alloc::string::String;

/// Failure modes shared by every module of the core crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("graph is not connected")]
    Disconnected,
    #[error("combination matrix is not primitive: {0}")]
    NotPrimitive(String),
    #[error("matrix is not balanced (max violation {0:e})")]
    NotBalanced(f64),
    #[error("matrix is not positive semidefinite (eigenvalue {0:e})")]
    NotPsd(f64),
    #[error("eigensolver failed after {iterations} iterations: {msg}")]
    Spectral { msg: String, iterations: usize },
    #[error("eigenvalue 1 of B has multiplicity {0}, expected 2")]
    Structure(usize),
    #[error("assumption violated: {0}")]
    Assumption(String),
    #[error("solver stopped at residual {residual:e} after {iterations} iterations")]
    Convergence { residual: f64, iterations: usize },
    #[error("non-finite iterate at iteration {0}")]
    Diverged(usize),
    #[error("Perron estimate of agent {agent} is not positive at iteration {iteration}")]
    Degenerate { agent: usize, iteration: usize },
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! invalid {
    ($($arg:tt)*) => {
        $crate::Error::Invalid(alloc::format!($($arg)*))
    };
}
pub(crate) use invalid;
