use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty word after normalization: {0:?}")]
    EmptyWord(String),
    #[error("empty reference caption")]
    EmptyReference,
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("index out of range in {context}: {index} >= {len}")]
    IndexOutOfRange {
        context: &'static str,
        index: usize,
        len: usize,
    },
    #[error("invalid value for {field}: {reason}")]
    InvalidValue { field: String, reason: String },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("schema error at line {line}: field `{field}`: {message}")]
    Schema {
        line: usize,
        field: String,
        message: String,
    },
    #[error("config error: {0}")]
    Config(String),
    #[error("missing config key `{0}`")]
    MissingKey(String),
    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: usize, detail: String },
    #[error("reference set is empty")]
    EmptyReferenceSet,
    #[error("corpus too small: need at least 2 images, got {0}")]
    CorpusTooSmall(usize),
    #[error("degenerate clusters: {0}")]
    DegenerateClusters(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(context: &'static str, expected: usize, got: usize) -> Self {
        Error::DimensionMismatch {
            context,
            expected,
            got,
        }
    }

    /// Stable short identifier, printed first on CLI failures.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::EmptyWord(_) => "empty_word",
            Error::EmptyReference => "empty_reference",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::IndexOutOfRange { .. } => "index_out_of_range",
            Error::InvalidValue { .. } => "invalid_value",
            Error::Parse { .. } => "parse_error",
            Error::Schema { .. } => "schema_error",
            Error::Config(_) => "config_error",
            Error::MissingKey(_) => "missing_key",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::EmptyReferenceSet => "empty_reference_set",
            Error::CorpusTooSmall(_) => "corpus_too_small",
            Error::DegenerateClusters(_) => "degenerate_clusters",
            Error::Checkpoint(_) => "checkpoint_error",
            Error::Io(_) => "io_error",
        }
    }

    /// Configuration and usage problems, as opposed to runtime failures.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::MissingKey(_) | Error::InvalidValue { .. }
        )
    }
}
