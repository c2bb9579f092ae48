use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is singular or not positive definite: {0}")]
    Singular(String),

    #[error("projection oracle failed: {0}")]
    Projection(String),

    #[error("operator evaluation failed: {0}")]
    Operator(String),

    #[error("power flow infeasible at this loading: {0}")]
    PowerFlow(String),

    #[error("vertex enumeration needs {count} vertices, cap is {cap}")]
    VertexCap { count: usize, cap: usize },

    #[error("ill-posed LMI program: {0}")]
    IllPosed(String),

    #[error("not robustly monotone over this uncertainty set: {0}")]
    NotMonotone(String),

    #[error("LMI infeasible at rho = {rho}: margin {margin:e}; {note}")]
    Infeasible { rho: f64, margin: f64, note: String },

    #[error("certificate rejected: {0}")]
    CertificateRejected(String),

    #[error("no convergence: {0}")]
    NoConvergence(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err(msg: impl Into<String>) -> Error {
    Error::Dimension(msg.into())
}
