use thiserror::Error;

/// Why a single MindBigData line was rejected.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseErrorKind {
    #[error("expected 7 tab-separated fields, found {0}")]
    FieldCount(usize),
    #[error("field `{field}` is not a valid integer: {value:?}")]
    BadInteger { field: &'static str, value: String },
    #[error("sample #{index} is not a finite decimal: {value:?}")]
    BadSample { index: usize, value: String },
    #[error("unknown device tag {0:?}")]
    UnknownDevice(String),
    #[error("code {0} outside [-1, 9]")]
    CodeOutOfRange(i64),
    #[error("declared size {declared} but {actual} samples present")]
    SizeMismatch { declared: usize, actual: usize },
    #[error("empty line")]
    Empty,
    #[error("line is not valid UTF-8")]
    InvalidUtf8,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("index error: {index} out of range for length {len}")]
    Index { index: usize, len: usize },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("line {line}: {kind}")]
    Parse { line: usize, kind: ParseErrorKind },
    #[error("{path}, line {line}: {message}")]
    Table {
        path: String,
        line: usize,
        message: String,
    },
    #[error("data error: {0}")]
    Data(String),
    #[error("serialization error: {0}")]
    Serialization(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit code: 2 config, 3 data, 4 protocol, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Precondition(_) => 2,
            Error::Parse { .. } | Error::Table { .. } | Error::Data(_) | Error::Io { .. } | Error::Serialization(_) => 3,
            Error::Protocol(_) => 4,
            Error::Shape(_) | Error::Index { .. } => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
