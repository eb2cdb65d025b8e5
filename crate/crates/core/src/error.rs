use alloc::string::String;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("insufficient reference: {0}")]
    InsufficientReference(String),
    #[error("imputation error: {0}")]
    Imputation(String),
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("constant covariate column {index} ({name})")]
    ConstantColumn { index: usize, name: String },
    #[error("fit did not converge: {0}")]
    NotConverged(String),
    #[error("eigensolver did not converge after {iterations} iterations (residual {residual:e})")]
    EigenNotConverged { iterations: usize, residual: f64 },
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("unknown gene: {0}")]
    UnknownGene(String),
    #[error("missing interaction value for edge ({0}, {1})")]
    MissingEdge(usize, usize),
    #[error("infeasible synthetic spec: {0}")]
    InfeasibleSpec(String),
}

impl Error {
    /// Numerical failures (as opposed to bad input data).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotConverged(_) | Error::EigenNotConverged { .. } | Error::NotPositiveDefinite
        )
    }
}

pub type Result<T> = core::result::Result<T, Error>;
