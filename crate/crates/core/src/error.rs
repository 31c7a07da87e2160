use alloc::string::String;

/// Errors shared across the crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("vector {index} has near-zero norm; refusing to normalize a degenerate embedding")]
    ZeroNorm { index: usize },
    #[error("temperature must be > 0, got {0}")]
    NonPositiveTemperature(f64),
    #[error("invalid margin: need 0 < delta_plus < delta_minus < 1, got ({0}, {1})")]
    InvalidMargin(f64, f64),
    #[error("batch too small: {got} pairs, need at least {need}")]
    BatchTooSmall { got: usize, need: usize },
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("no masked targets to score")]
    EmptyTargets,
    #[error("token id {id} out of range for vocabulary of {vocab_size}")]
    TokenIdOutOfRange { id: usize, vocab_size: usize },
    #[error("masked position ({row}, {col}) is out of range or padding")]
    PositionOutOfRange { row: usize, col: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("corpus has no examples")]
    EmptyCorpus,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {need} points, got {got}")]
    InsufficientPoints { got: usize, need: usize },
    #[error("not a probability vector: {0}")]
    InvalidProbVec(String),
    #[error("checkpoint and corpus disagree: {0}")]
    SchemaMismatch(String),
    #[error("non-finite value produced in {0}")]
    NonFinite(&'static str),
}

pub type Result<T> = core::result::Result<T, Error>;
