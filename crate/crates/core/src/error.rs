use thiserror::Error;

/// Errors produced anywhere in the encode / train / decode pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("csv parse error at row {row}: {message}")]
    CsvRow { row: usize, message: String },

    #[error("csv parse error at row {row} col {col}: cannot parse {cell:?} as a number")]
    CsvCell {
        row: usize,
        col: usize,
        cell: String,
    },

    #[error("optimizer produced a non-finite cost or gradient at iteration {iteration}")]
    Divergence { iteration: usize },

    #[error("training failed on fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("unsupported model format version {found} (this build reads version {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error("model file truncated: expected {0}")]
    Truncated(String),

    #[error("model header field `{field}` does not match the payload: {reason}")]
    HeaderMismatch { field: String, reason: String },

    #[error("malformed model file at line {line}: {message}")]
    Malformed { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidArgument {
        name,
        reason: reason.into(),
    }
}

pub(crate) fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            actual,
        })
    }
}
