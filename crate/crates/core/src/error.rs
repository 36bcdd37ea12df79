use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LveError {
    #[error("enumeration limit exceeded: requested {requested}, cap {cap}")]
    EnumerationLimit { requested: usize, cap: usize },

    #[error("invalid weakening assignment: {0}")]
    InvalidAssignment(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid tree: {0}")]
    InvalidTree(String),

    #[error("capability unavailable: {0}")]
    Capability(String),

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("cost cap exceeded: {0}")]
    CostCap(String),

    #[error("tadpole cancellation failed: {0}")]
    CancellationFailure(String),
}

pub type Result<T> = std::result::Result<T, LveError>;
