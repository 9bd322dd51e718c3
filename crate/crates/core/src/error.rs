use thiserror::Error;

/// Errors raised by the integrator and its diagnostics.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Configuration(String),

    /// A potential or gradient returned a non-finite value.
    #[error("non-finite potential evaluation at node {node}: {message}")]
    NonlinearEvaluation { node: usize, message: String },

    #[error("Newton iteration did not converge after {iterations} iterations (residual {residual_norm:e})")]
    Divergence {
        iterations: usize,
        residual_norm: f64,
    },

    #[error("step aborted: {0}")]
    AbortedStep(String),

    #[error("reference alignment error: {0}")]
    Alignment(String),

    #[error("singular linear system in Newton update")]
    SingularJacobian,
}

pub type Result<T> = std::result::Result<T, Error>;
