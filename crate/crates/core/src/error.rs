use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty measure")]
    EmptyMeasure,

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("kernel overflow at t={t}, x={x:?}, y={y:?}")]
    KernelOverflow { t: f64, x: Vec<f64>, y: Vec<f64> },

    #[error("unknown kernel '{name}'; registry: {}", registry.join(", "))]
    UnknownKernel { name: String, registry: Vec<String> },

    #[error("unknown initial-law sampler '{0}'; available: delta, normal, uniform_box")]
    UnknownSampler(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("unsupported dimension {0} (only d = 1 is supported here)")]
    UnsupportedDimension(usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("blow-up at step {step}, particle {particle}")]
    BlowUp { step: usize, particle: usize },

    #[error("config mismatch: {0}")]
    ConfigMismatch(String),

    #[error("record has no full particle paths")]
    MissingPaths,

    #[error("tridiagonal solve failed at time level {0}")]
    TridiagonalFailure(usize),

    #[error("domain exit at step {step}")]
    DomainExit { step: usize },

    #[error("ladder too short: need at least two rungs, got {0}")]
    LadderTooShort(usize),

    #[error("no moment oracle registered for kernel '{0}'")]
    NoOracle(String),

    #[error("hypotheses refuted for scenario: {0}")]
    HypothesesRefuted(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("kernel table: {0}")]
    Table(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
