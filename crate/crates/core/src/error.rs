use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("invalid case: {0}")]
    InvalidCase(String),

    #[error("duplicate line between buses {0} and {1}")]
    DuplicateLine(i64, i64),

    #[error("network is disconnected: bus {0} is unreachable from bus {1}")]
    Disconnected(i64, i64),

    #[error("line ({0},{1}) has zero series admittance")]
    ZeroSeriesAdmittance(i64, i64),

    #[error("case has no slack bus")]
    NoSlack,

    #[error("case has {0} slack buses, expected exactly one")]
    MultipleSlack(usize),

    #[error("unsupported branch ({from},{to}): {reason}")]
    UnsupportedBranch { from: i64, to: i64, reason: String },

    #[error("unknown bus {0}")]
    UnknownBus(usize),

    #[error("no line between buses {0} and {1}")]
    UnknownLine(usize, usize),

    #[error("power flow did not converge in {iterations} iterations (mismatch {mismatch:.3e})")]
    NonConvergence { iterations: usize, mismatch: f64 },

    #[error("singular Jacobian at Newton iteration {0}")]
    SingularJacobian(usize),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("allocation refused: {0}")]
    AllocationRefused(String),

    #[error("rank-deficient constraint matrix; deficient directions: {directions:?}")]
    RankDeficient { directions: Vec<Vec<f64>> },

    #[error("empty line set")]
    EmptyLineSet,
}

impl Error {
    pub(crate) fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse { location: location.into(), message: message.into() }
    }
}
