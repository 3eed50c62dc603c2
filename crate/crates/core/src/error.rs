use std::io;

use thiserror::Error;

/// Errors raised anywhere in the tracking pipeline.
#[derive(Debug, Error)]
pub enum KmcError {
    #[error("invalid target: {0}")]
    InvalidTarget(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("division by zero in closed-form solve")]
    DivisionByZero,
    #[error("singular linear system")]
    SingularMatrix,
    #[error("near-singular spectrum: |k_hat + lambda| = {0:e}")]
    NearSingular(f64),
    #[error("non-negligible imaginary residue {residue:e} (max magnitude {max_magnitude:e})")]
    ImaginaryResidue { residue: f64, max_magnitude: f64 },
    #[error("learning rate {0} outside [0, 1]")]
    InvalidRate(f64),
    #[error("index {index} out of range (len {len})")]
    Index { index: usize, len: usize },
    #[error("format error: {0}")]
    Format(String),
    #[error("model not initialized")]
    NotInitialized,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("empty sequence")]
    EmptySequence,
    #[error("sequence layout error: {0}")]
    Layout(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("image error: {0}")]
    Image(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, KmcError>;
