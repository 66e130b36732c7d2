use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad category of an [`Error`], used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad input data, missing files or models, malformed artifacts.
    Data,
    /// A numerical routine could not produce a valid result.
    Numerical,
    /// Invalid parameters supplied by the caller.
    Config,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot parse manifest {path}: {message}")]
    ManifestParse { path: PathBuf, message: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("checksum mismatch: manifest says {expected}, blob has {actual}")]
    ChecksumMismatch { expected: String, actual: String },

    #[error("unknown phoneme {0:?}")]
    UnknownPhoneme(String),

    #[error("unknown symbol {0:?} in natural-class lookup")]
    UnknownSymbol(String),

    #[error("non-finite value at row {row}, column {col}")]
    NonFiniteValue { row: usize, col: usize },

    #[error("invalid record: {0}")]
    InvalidRecord(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("too few samples: need at least {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("missing trained model: {0}")]
    MissingModel(String),

    #[error("training split is empty")]
    EmptyTrainSplit,

    #[error("phoneme {0:?} has zero prior probability")]
    ZeroPrior(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("utterance {0:?} has no segments")]
    EmptyUtterance(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("missing ground truth: {0}")]
    MissingGroundTruth(String),

    #[error("environment entropy is zero (all environments identical)")]
    DegenerateEnvironments,

    #[error("too few utterances: need at least {needed}, got {got}")]
    TooFewUtterances { needed: usize, got: usize },

    #[error("duplicate score entry: {0}")]
    DuplicateEntry(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn manifest(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::ManifestParse {
            path: path.into(),
            message: message.to_string(),
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::NumericalFailure(_) => ErrorClass::Numerical,
            Error::InvalidConfig(_) => ErrorClass::Config,
            _ => ErrorClass::Data,
        }
    }

    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "Io",
            Error::ManifestParse { .. } => "ManifestParseError",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::ChecksumMismatch { .. } => "ChecksumMismatch",
            Error::UnknownPhoneme(_) => "UnknownPhoneme",
            Error::UnknownSymbol(_) => "UnknownSymbol",
            Error::NonFiniteValue { .. } => "NonFiniteValue",
            Error::InvalidRecord(_) => "InvalidRecord",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::TooFewSamples { .. } => "TooFewSamples",
            Error::NumericalFailure(_) => "NumericalFailure",
            Error::MissingModel(_) => "MissingModel",
            Error::EmptyTrainSplit => "EmptyTrainSplit",
            Error::ZeroPrior(_) => "ZeroPrior",
            Error::DegenerateData(_) => "DegenerateData",
            Error::EmptyUtterance(_) => "EmptyUtterance",
            Error::DegenerateInput(_) => "DegenerateInput",
            Error::MissingGroundTruth(_) => "MissingGroundTruth",
            Error::DegenerateEnvironments => "DegenerateEnvironments",
            Error::TooFewUtterances { .. } => "TooFewUtterances",
            Error::DuplicateEntry(_) => "DuplicateEntry",
            Error::InvalidConfig(_) => "InvalidConfig",
        }
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}
