use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("point {value} is not strictly inside the domain of block {block}")]
    Domain { block: usize, value: f64 },

    #[error("numerically singular system: {0}")]
    Singular(String),

    #[error("invariant violated: {0}")]
    InvariantViolation(String),

    #[error("iteration limit of {0} exceeded")]
    IterationLimit(usize),

    #[error("infeasible problem: {0}")]
    Infeasible(String),

    #[error("kernel factorization rank {rank} exceeds the cap {cap}; use a larger epsilon or fewer features")]
    RankCap { rank: usize, cap: usize },

    #[error("degenerate model: {0}")]
    DegenerateModel(String),

    #[error("unknown sketch timestamp {0}")]
    UnknownTimestamp(usize),

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by bad input rather than by the solver itself.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Dimension { .. }
                | Error::InvalidParameter(_)
                | Error::Infeasible(_)
                | Error::Parse { .. }
                | Error::RankCap { .. }
                | Error::IndexOutOfRange { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
