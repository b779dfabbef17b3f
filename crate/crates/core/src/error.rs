use thiserror::Error;

pub type Result<T> = std::result::Result<T, IrpeError>;

#[derive(Debug, Error)]
pub enum IrpeError {
    #[error("dimension mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numeric error in {context}: {detail}")]
    Numeric { context: String, detail: String },

    #[error("distance {0} is not an achievable distance of this grid")]
    Lookup(f64),

    #[error("bucket id {id} out of range for table with {num_buckets} buckets")]
    Corruption { id: u32, num_buckets: usize },

    #[error("wrong encoding mode: expected {expected}, got {got}")]
    Mode {
        expected: &'static str,
        got: &'static str,
    },

    #[error("stale forward cache: parameters changed since the forward pass")]
    StaleCache,

    #[error("benchmark error: {0}")]
    Benchmark(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl IrpeError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        IrpeError::Shape {
            op,
            detail: detail.into(),
        }
    }
}
