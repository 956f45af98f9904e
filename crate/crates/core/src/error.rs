use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix has {got} entries, expected {rows}x{cols}")]
    ShapeMismatch { rows: usize, cols: usize, got: usize },
    #[error("matrix must have at least one row and one column")]
    EmptyMatrix,
    #[error("non-finite entry at ({0}, {1})")]
    NonFinite(usize, usize),
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("row {0} sums to zero")]
    ZeroRow(usize),
    #[error("negative entry at ({0}, {1})")]
    NegativeEntry(usize, usize),
    #[error("row {row} sums to {sum}, not 1")]
    NotStochastic { row: usize, sum: f64 },
    #[error("projection needs dimension >= 2, got {0}")]
    DimensionTooSmall(usize),
    #[error("row sums are not constant (spread {spread:e})")]
    NotRowSumConstant { spread: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("empty list")]
    EmptyList,
    #[error("precondition violated by matrix {index}: {reason}")]
    PreconditionViolated { index: usize, reason: String },
    #[error("driven source cannot rewind to t={requested} (oldest available {oldest})")]
    ProcessExhausted { requested: u64, oldest: u64 },
    #[error("numerically singular frame at t={0}")]
    SingularMatrix(u64),
    #[error("orbit diverged at step {0}")]
    OrbitDiverged(u64),
    #[error("state diverged at step {0}")]
    StateDiverged(u64),
    #[error("matrix set is empty")]
    EmptySet,
    #[error("enumeration of {words} words exceeds the budget of {budget}")]
    BudgetExceeded { words: u128, budget: u128 },
    #[error("statistic needs at least two nodes, got {0}")]
    DegenerateDimension(usize),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("unknown {kind} `{name}`")]
    UnknownVariant { kind: &'static str, name: String },
    #[error("unknown sweep parameter `{0}`")]
    UnknownParameter(String),
    #[error("config: {0}")]
    Config(String),
}

impl Error {
    /// Failures of the numerics themselves, as opposed to bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::SingularMatrix(_)
                | Error::OrbitDiverged(_)
                | Error::StateDiverged(_)
                | Error::BudgetExceeded { .. }
                | Error::ProcessExhausted { .. }
        )
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParams(msg.into())
    }
}
