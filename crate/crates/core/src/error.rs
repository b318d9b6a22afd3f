use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("odd dimension {dim} in {axis}; enable padding or supply an even-sized matrix")]
    OddDimension { axis: &'static str, dim: usize },

    #[error("non-finite value at index {0}")]
    NonFinite(usize),

    #[error("invalid stage count {0}; at least one stage is required")]
    InvalidStageCount(usize),

    #[error("invalid code {code} at index {index}; codes must be in 0..=3")]
    InvalidCode { index: usize, code: u8 },

    #[error("malformed packed length: {count} codes need {expected} bytes, got {actual}")]
    MalformedLength {
        count: usize,
        expected: usize,
        actual: usize,
    },

    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),

    #[error("unsupported format version {0}")]
    VersionMismatch(u16),

    #[error("truncated payload: {0}")]
    Truncated(String),

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("unsupported dtype {0:?}")]
    UnsupportedDtype(String),

    #[error("group misalignment: stage has {stage} groups per row, table has {table}")]
    GroupMisalignment { stage: usize, table: usize },

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("training diverged at step {step}: loss is {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
