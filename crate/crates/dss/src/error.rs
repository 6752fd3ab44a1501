//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DssError {
    /// Dimension or length disagreement between operands.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// Input outside an operation's domain (empty sequence, delta <= 0, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// An eigenvalue is exactly zero, which the kernel closed form excludes.
    #[error("eigenvalue {index} is zero; the kernel closed form requires lambda != 0")]
    ZeroEigenvalue { index: usize },

    /// The row-softmax denominator vanished for one eigenvalue row. This is
    /// the degenerate e^(L*lambda*delta) = 1 case.
    #[error("singular softmax row for eigenvalue index {index}: denominator magnitude below 1e-300")]
    SingularRow { index: usize },

    /// A numeric routine produced or detected a non-finite value.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Training loss became non-finite.
    #[error("training diverged at step {step}")]
    Diverged { step: usize },

    /// Configuration file could not be parsed or failed validation.
    #[error("config error: {0}")]
    Config(String),

    /// Misuse of an API (e.g. backward on a node from another tape).
    #[error("usage error: {0}")]
    Usage(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl DssError {
    /// Stable process exit code for the CLI: 2 config, 3 numeric/singularity,
    /// 4 divergence, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            DssError::Config(_) => 2,
            DssError::SingularRow { .. }
            | DssError::ZeroEigenvalue { .. }
            | DssError::NonFinite(_)
            | DssError::Domain(_)
            | DssError::ShapeMismatch(_) => 3,
            DssError::Diverged { .. } => 4,
            DssError::Usage(_) | DssError::Io(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, DssError>;
