use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("generator {index} is not orthogonal (defect {defect:.3e})")]
    NotOrthogonal { index: usize, defect: f64 },
    #[error("group closure exceeded {max_order} elements")]
    GroupTooLarge { max_order: usize },
    #[error("group elements {0} and {1} are closer than the separation threshold")]
    NotSeparated(usize, usize),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("unsupported dimension {0}")]
    UnsupportedDimension(usize),
    #[error("singular value decomposition failed")]
    SvdFailure,
    #[error("matrix is numerically singular (smallest singular value {sigma_min:.3e})")]
    SingularMatrix { sigma_min: f64 },
    #[error("endpoints lie in different connected components of O(d)")]
    ComponentMismatch,
    #[error("principal logarithm undefined (rotation by pi)")]
    LogBranchFailure,
    #[error("argument out of domain: {0}")]
    DomainError(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("line search failed to decrease the energy")]
    LineSearchFailure,
    #[error("margin domain too small: {0}")]
    DomainTooSmall(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
