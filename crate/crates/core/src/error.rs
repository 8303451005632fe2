use thiserror::Error;

/// Every failure the engine can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("contract error: {0}")]
    Contract(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("class {class} has {count} rows, at least {needed} required")]
    InsufficientClass {
        class: usize,
        count: usize,
        needed: usize,
    },
    #[error("AUC undefined for class {0}: positives and negatives are both required")]
    UndefinedAuc(usize),
    #[error("capacity exceeded: {0}")]
    Capacity(String),
    #[error("training failure: {0}")]
    TrainingFailure(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("{stage} stage failed")]
    Stage { stage: String, source: Box<Error> },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Innermost error beneath any stage wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
