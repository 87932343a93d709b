use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("backward called on a tensor with no recorded graph")]
    GraphDetached,
    #[error("token id {id} out of range for vocabulary of size {size}")]
    IdOutOfRange { id: usize, size: usize },
    #[error("corpus contains no non-empty text")]
    EmptyCorpus,
    #[error("vocabulary mismatch: encoder expects {expected:016x}, batch carries {found:016x}")]
    VocabMismatch { expected: u64, found: u64 },
    #[error("unknown language `{0}` (expected `ar` or `en`)")]
    UnknownLanguage(String),
    #[error("majority vote over an empty prediction list")]
    EmptyPredictionList,
    #[error("{}:{line}: malformed row: {reason}", path.display())]
    MalformedRow {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("{}:{line}: unknown label `{label}`", path.display())]
    UnknownLabel {
        path: PathBuf,
        line: usize,
        label: String,
    },
    #[error("test example leaks into train/dev: `{text}`")]
    DuplicateTestLeak { text: String },
    #[error("duplicate example id `{0}`")]
    DuplicateId(String),
    #[error("gold and predicted label sequences differ in length ({gold} vs {pred})")]
    LengthMismatch { gold: usize, pred: usize },
    #[error("cannot compute metrics over zero examples")]
    EmptyEvaluation,
    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("missing data: {0}")]
    MissingData(String),
    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
