use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("line {line}: timestamp {timestamp} is not after the previous row")]
    Ordering { line: u64, timestamp: String },

    #[error("input contains no data rows")]
    EmptyInput,

    #[error("missing market hour {missing}")]
    Gap { missing: String },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("empty support: hi {hi} < lo {lo}")]
    EmptySupport { lo: i64, hi: i64 },

    #[error("feature dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("infeasible window: t_le - t_es = {window} h < operation length {length} h")]
    Infeasible { window: i64, length: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid observation: {0}")]
    InvalidObservation(String),

    #[error("window [{start}, {end}) outside series of {len} hours")]
    Range { start: i64, end: i64, len: usize },

    #[error("no feasible schedule: flex-offer has no feasible interval")]
    NoFeasibleSchedule,

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad input data rather than a broken invariant.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::Dimension { .. })
    }
}
