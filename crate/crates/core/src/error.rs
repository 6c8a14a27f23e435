use thiserror::Error;

/// Errors raised across the toolkit.
///
/// Variants are grouped by what the caller can do about them: `Invalid*`
/// and `Layout*` are caller mistakes, `Numerical` covers integrator and
/// solver failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown mode `{0}`")]
    UnknownMode(String),

    #[error("layout mismatch: {0}")]
    LayoutMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid density matrix: {0}")]
    InvalidState(String),

    #[error("amplitude {amplitude} too large for mode of dimension {dim} (|alpha|^2 must be <= dim/4)")]
    TruncationTooSmall { amplitude: f64, dim: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
