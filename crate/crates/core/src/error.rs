use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("pgm decode error at byte {offset}: {reason}")]
    Decode { offset: usize, reason: String },

    #[error("index parse error on line {line}: {reason}")]
    IndexParse { line: usize, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("class `{class}` has {count} training rows, need at least {required}")]
    TooFewSamples {
        class: String,
        count: usize,
        required: usize,
    },

    #[error("within-class scatter is singular (condition number {condition:e})")]
    SingularScatter { condition: f64 },

    #[error("no discriminant directions: between-class scatter is zero")]
    NoDiscriminant,

    #[error("model format error on line {line}: {reason}")]
    ModelFormat { line: usize, reason: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// True when the root cause is a configuration problem.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Config(_) => true,
            Error::Context { source, .. } => source.is_config(),
            _ => false,
        }
    }
}
