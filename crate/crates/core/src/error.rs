use thiserror::Error;

use crate::dynamics::StepRecord;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("degenerate batch: covariance needs at least 2 rows, got {rows}")]
    DegenerateBatch { rows: usize },

    #[error("matrix is not positive definite: {which} {index} is {value:e}")]
    NotPositiveDefinite {
        which: &'static str,
        index: usize,
        value: f64,
    },

    #[error("backward seed must be scalar-valued, got shape {shape:?}")]
    NonScalarSeed { shape: Vec<usize> },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("mutual information is undefined for sigma_xi = {0}")]
    UndefinedInformation(f64),

    #[error("malformed table: {0}")]
    Table(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("non-finite loss or gradient at step {step}")]
    Divergence {
        step: usize,
        partial: Vec<StepRecord>,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
