use thiserror::Error;

/// Errors raised by the optimizer, the diagnostics and the experiment runner.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid parameters or configuration values.
    #[error("configuration error: {0}")]
    Config(String),

    /// An operation was called with arguments outside its domain.
    #[error("usage error: {0}")]
    Usage(String),

    /// The state became non-finite.
    #[error("divergence at step {step}: non-finite particle state")]
    Divergence { step: usize },

    /// Batches of size one never connect two particles.
    #[error("no connectivity: batch size {batch_size} cannot connect {particles} particles")]
    NoConnectivity { particles: usize, batch_size: usize },

    /// A requested computation exceeds a configured cap.
    #[error("resource limit: {0}")]
    Resource(String),

    /// A bound check was given inputs that violate its hypotheses.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Not enough usable data for a fit.
    #[error("estimation error: {0}")]
    Estimation(String),

    /// The requested check does not apply to this run.
    #[error("inapplicable: {0}")]
    Inapplicable(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

pub(crate) fn usage(msg: impl Into<String>) -> Error {
    Error::Usage(msg.into())
}
