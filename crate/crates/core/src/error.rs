use std::io;

use thiserror::Error;

/// Every failure the engine can report.
#[derive(Debug, Error)]
pub enum FaarError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value at {0}")]
    NonFinite(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("band {lo}-{hi} Hz is invalid for fs = {fs} Hz")]
    BandOutOfRange { lo: f64, hi: f64, fs: f64 },
    #[error("input too short: need at least {need} samples, got {got}")]
    TooShort { need: usize, got: usize },
    #[error("zero variance window")]
    ZeroVariance,
    #[error("window of {samples} samples is too short (need {need})")]
    WindowTooShort { samples: usize, need: usize },
    #[error("too few windows: need at least {need}, got {got}")]
    TooFewWindows { need: usize, got: usize },
    #[error("no usable clean reference: {0}")]
    ReferenceUnavailable(String),
    #[error("model mismatch: {0}")]
    ModelMismatch(String),
    #[error("too few points for knee detection: need {need}, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("curve is not sorted in the declared direction")]
    NotSorted,
    #[error("too few epochs: need at least {need}, got {got}")]
    TooFewEpochs { need: usize, got: usize },
    #[error("all feature rows are identical")]
    DegenerateFeatures,
    #[error("matrix is not symmetric positive definite: {0}")]
    NotSpd(String),
    #[error("training labels contain a single class")]
    SingleClass,
    #[error("insufficient folds: {0}")]
    InsufficientFolds(String),
    #[error("subject sets differ: {0}")]
    SubjectMismatch(String),
    #[error("too few subjects: need at least {need}, got {got}")]
    TooFewSubjects { need: usize, got: usize },
    #[error("bad configuration: {0}")]
    BadConfig(String),
    #[error("artifact label out of range: {0}")]
    LabelOutOfRange(String),
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported format version {0}")]
    BadVersion(u16),
    #[error("header mismatch: {0}")]
    HeaderMismatch(String),
    #[error("truncated payload: expected {expected} bytes, got {got}")]
    TruncatedPayload { expected: usize, got: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = FaarError> = std::result::Result<T, E>;
