use crate::optim::Trajectory;

/// Library-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// The iterate operator norm crossed the divergence threshold. Runners
    /// attach the partial trajectory recorded up to the failing step so that
    /// sweeps can flag the cell and continue.
    #[error("iterate diverged at step {step}: |U| = {norm:.6e} > threshold {threshold:.6e}")]
    Divergence {
        step: usize,
        norm: f64,
        threshold: f64,
        partial: Option<Box<Trajectory>>,
    },

    /// A scalar sequence never reached the region that defines a phase boundary.
    #[error("phase boundary not found: {0}")]
    BoundaryNotFound(String),

    /// The support of a random quantity crossed into a region where the
    /// requested fractional power is undefined.
    #[error("domain violation: {0}")]
    DomainViolation(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
