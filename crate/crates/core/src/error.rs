use thiserror::Error;
use wcaps_autodiff::GraphError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: unknown polarity label `{label}`")]
    Label { line: usize, label: String },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("cannot stratify: {0}")]
    Stratification(String),
    #[error("invalid synthetic spec: {0}")]
    Spec(String),
    #[error("pipeline: {0}")]
    Pipeline(String),
    #[error("embedding dimension {found} does not match configured {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("index {index} out of range for a table of {size} rows")]
    Bounds { index: usize, size: usize },
    #[error("domain statistics: {0}")]
    Stats(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("training domain `{domain}`: {message}")]
    Training { domain: String, message: String },
    #[error("model format version {found} is not supported (expected {expected})")]
    Version { expected: u32, found: u32 },
    #[error("model file failed integrity check: {0}")]
    Integrity(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}
