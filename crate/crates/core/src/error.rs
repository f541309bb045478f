use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the toolkit reports. Variants carry enough context (byte
/// offset, row, shape) to locate the offending input.
#[derive(Debug, Error)]
pub enum Error {
    #[error("bad magic at byte offset {offset}: expected \"LCALDS01\"")]
    MagicMismatch { offset: u64 },

    #[error("file truncated at byte offset {offset} while reading {section}")]
    TruncatedFile { offset: u64, section: &'static str },

    #[error("row {row}: label {label} out of range for {classes} classes")]
    LabelOutOfRange { row: usize, label: i64, classes: usize },

    #[error("row {row}: non-finite value in {what}")]
    NonFiniteValue { row: usize, what: &'static str },

    #[error("dataset must contain at least one row")]
    RejectedEmptyDataset,

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("csv parse error at line {line}: {message}")]
    CsvParse { line: usize, message: String },

    #[error("i/o failure on {path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("split fractions must be positive and sum to 1 (got sum {sum})")]
    FractionSumInvalid { sum: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("non-finite input to {0}")]
    NonFiniteInput(&'static str),

    #[error("empty input to {0}")]
    EmptyInput(&'static str),

    #[error("invalid bracket [{lo}, {hi}]")]
    InvalidBracket { lo: f64, hi: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("anchor {anchor} has no usable neighbours")]
    NoNeighbors { anchor: usize },

    #[error("every bin is empty")]
    AllBinsEmpty,

    #[error("no bin retained after applying the minimum bin size {min_bin_size}")]
    NoRetainedBins { min_bin_size: usize },

    #[error("delta must lie in (0, 1], got {0}")]
    InvalidDelta(f64),

    #[error("k = {k} requires more than {k} points, got {n}")]
    KTooLarge { k: usize, n: usize },

    #[error("class count mismatch: model has {expected}, data has {found}")]
    ClassCountMismatch { expected: usize, found: usize },

    #[error("synthetic spec invalid: {0}")]
    SpecInvalid(String),

    #[error("epsilon {requested} exceeds the largest feasible l1 perturbation {max_feasible}")]
    EpsilonTooLarge { requested: f64, max_feasible: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("class {class} is degenerate in the calibration split ({positives} of {n} rows)")]
    DegenerateClass { class: usize, positives: usize, n: usize },

    #[error("model format error: {0}")]
    ModelFormat(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::IoFailure {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by the numbers themselves rather than by the
    /// shape or content of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Numerical(_)
                | Error::NonFiniteInput(_)
                | Error::NoNeighbors { .. }
                | Error::InvalidBracket { .. }
        )
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::ModelFormat(e.to_string())
    }
}
