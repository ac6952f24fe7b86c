use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("duplicate document id {0:?}")]
    DuplicateId(String),
    #[error("invalid label space: {0}")]
    InvalidLabelSpace(String),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("sample selection is empty")]
    EmptySelection,
    #[error("label function set is empty")]
    EmptyLfSet,
    #[error("no token survived vocabulary construction")]
    EmptyVocabulary,
    #[error("feature dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("could not draw a subsample with at least two classes")]
    DegenerateSubsample,
    #[error("training targets cover fewer than two classes")]
    DegenerateTargets,
    #[error("all label-model weights are zero")]
    AllWeightsZero,
    #[error("label matrix carries no signal (every entry abstains)")]
    NoSignal,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("document ids do not align: {0}")]
    IdAlignment(String),
    #[error("provider unreachable: {0}")]
    ProviderUnreachable(String),
    #[error("malformed provider reply: {0}")]
    MalformedProviderReply(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
