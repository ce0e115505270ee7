use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("block grid is empty: {0}")]
    EmptyGrid(String),
    #[error("bad block shape: {0}")]
    BadBlockShape(String),
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("grid index {index:?} outside grid counts {counts:?}")]
    IndexOutOfGrid { index: [usize; 3], counts: [usize; 3] },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("too few samples: need at least {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("STM `{0}` has no features")]
    EmptyStm(String),
    #[error("invalid number of rigid blocks K={k}: {reason}")]
    BadK { k: usize, reason: String },
    #[error("matrix is not positive definite (min eigenvalue {0:e})")]
    NotSpd(f64),
    #[error("only one class present in the labels")]
    SingleClass,
    #[error("ill-conditioned problem: {0}")]
    IllConditioned(String),
    #[error("expected {expected} vectors, got {got}")]
    WrongCount { expected: usize, got: usize },
    #[error("too few subjects: {subjects} subjects for {folds} folds")]
    TooFewSubjects { subjects: usize, folds: usize },
    #[error("no prediction for test item `{0}`")]
    MissingPrediction(String),
    #[error("invalid sequence: {0}")]
    InvalidSequence(String),
    #[error("malformed {kind} data: {reason}")]
    Format { kind: &'static str, reason: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("provenance violation: {0}")]
    Provenance(String),
    #[error("image decode error: {0}")]
    Image(#[from] image::ImageError),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Coarse failure category, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numerical,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::BadK { .. } => ErrorClass::Config,
            Error::DegenerateData(_)
            | Error::NotSpd(_)
            | Error::IllConditioned(_) => ErrorClass::Numerical,
            _ => ErrorClass::Data,
        }
    }

    pub(crate) fn format(kind: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            kind,
            reason: reason.into(),
        }
    }
}
