use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProbError {
    #[error("expected {expected} probabilities, found {found}")]
    WrongArity { expected: usize, found: usize },
    #[error("probability at index {index} is {value}, outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },
    #[error("probabilities sum to {sum}, more than {tol} away from 1")]
    NotNormalized { sum: f64, tol: f64 },
    #[error("probability at index {index} is not finite")]
    NonFinite { index: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DatasetError {
    #[error("invalid label space: {0}")]
    InvalidLabelSpace(String),
    #[error("duplicate instance id {0:?}")]
    DuplicateId(String),
    #[error("instance {id:?} has label {label} but there are only {num_classes} classes")]
    InvalidLabel {
        id: String,
        label: usize,
        num_classes: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TriageError {
    #[error("sample matrix has no instances")]
    EmptyMatrix,
    #[error("budget {requested} exceeds the {available} available records")]
    BudgetTooLarge { requested: String, available: usize },
    #[error("invalid sample matrix: {0}")]
    InvalidMatrix(String),
}

#[derive(Debug, Error)]
pub enum CleaningError {
    #[error("invalid cleaning plan: {0}")]
    InvalidPlan(String),
    #[error("fold {fold} has no instances of class {class}")]
    FoldTooSmall { fold: usize, class: usize },
    #[error("instance {0:?} has no gold label")]
    Unlabeled(String),
    #[error("predictor failed on fold {fold}: {source}")]
    PredictorFailure {
        fold: usize,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
    #[error(transparent)]
    Triage(#[from] TriageError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MmError {
    #[error("expected {expected} model predictions, found {found}")]
    ArityMismatch { expected: usize, found: usize },
    #[error("covariance matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("class {class} has {count} training instances, at least {required} required")]
    ClassTooSmall {
        class: usize,
        count: usize,
        required: usize,
    },
    #[error("Gibbs chain for class {class} diverged at iteration {iteration}")]
    ChainDiverged { class: usize, iteration: usize },
    #[error("expected dimension {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("validation frame is empty")]
    EmptyValidation,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("frame has no labels")]
    MissingLabels,
    #[error(transparent)]
    Prob(#[from] ProbError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("length mismatch: {left} predictions vs {right} labels")]
    LengthMismatch { left: usize, right: usize },
    #[error("no predictions supplied")]
    Empty,
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BaselineError {
    #[error("training texts produced an empty vocabulary")]
    EmptyVocabulary,
    #[error("training data contains a single class")]
    SingleClassTraining,
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),
    #[error("expected dimension {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: duplicate instance id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: malformed record: {message}")]
    MalformedRecord { line: usize, message: String },
    #[error("instance {instance:?} has {found} sample rows, header declares T = {expected}")]
    InconsistentT {
        instance: String,
        expected: usize,
        found: usize,
    },
    #[error("instance {instance:?}: {source}")]
    InvalidProbabilities {
        instance: String,
        #[source]
        source: ProbError,
    },
    #[error("unknown instance {0:?}")]
    UnknownInstance(String),
    #[error("label {label} is invalid for {num_classes} classes")]
    InvalidLabel { label: usize, num_classes: usize },
    #[error("duplicate annotation event for instance {instance:?} in round {round}")]
    DuplicateEvent { instance: String, round: u32 },
    #[error("invalid annotation event: {0}")]
    InvalidEvent(String),
    #[error("cannot serialize record: {0}")]
    Unwritable(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

impl StoreError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        StoreError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn malformed(line: usize, message: impl Into<String>) -> Self {
        StoreError::MalformedRecord {
            line,
            message: message.into(),
        }
    }
}
