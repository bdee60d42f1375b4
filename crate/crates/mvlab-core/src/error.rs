//! Error type shared by all core modules.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Structured errors raised by tensor ops, model construction,
/// data preparation, training and evaluation.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operand shapes are incompatible for the named operation.
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    /// A scalar (1×1) tensor was required.
    NotScalar {
        op: &'static str,
        shape: (usize, usize),
    },
    /// Operands belong to different tapes.
    TapeMismatch { op: &'static str },
    /// Backward was called on a tensor that is not attached to a tape.
    ConstantLoss,
    /// Column slice bounds fall outside the tensor.
    SliceOutOfBounds {
        cols: usize,
        start: usize,
        end: usize,
    },
    /// Buffer length does not match rows × cols.
    LengthMismatch {
        rows: usize,
        cols: usize,
        len: usize,
    },
    /// Product-of-experts fusion over an empty expert list without a prior.
    EmptyExpertList,
    /// A bound term was requested with an empty encoding set.
    EmptyEncodeSet,
    /// The objective is supervised but the batch carries no labels.
    MissingLabels,
    /// A configuration value failed validation.
    InvalidConfig(String),
    /// Cholesky factorization failed even after jitter escalation.
    CholeskyFailed { size: usize, attempts: usize },
    /// Columns with (near-)zero variance where variation is required.
    ZeroVarianceColumns {
        context: &'static str,
        columns: Vec<usize>,
    },
    /// Row counts disagree between two aligned inputs.
    RowCountMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },
    /// Labels contain a single class where both are required.
    SingleClassLabels { context: &'static str },
    /// Too few rows for the requested computation.
    TooFewRows { context: &'static str, rows: usize },
    /// Training produced a non-finite loss.
    NonFiniteLoss { epoch: usize, batch: usize },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { op, left, right } => write!(
                f,
                "{op}: shape mismatch {}x{} vs {}x{}",
                left.0, left.1, right.0, right.1
            ),
            Error::NotScalar { op, shape } => {
                write!(f, "{op}: expected 1x1 scalar, got {}x{}", shape.0, shape.1)
            }
            Error::TapeMismatch { op } => {
                write!(f, "{op}: operands recorded on different tapes")
            }
            Error::ConstantLoss => write!(f, "backward: loss tensor is not on a tape"),
            Error::SliceOutOfBounds { cols, start, end } => {
                write!(f, "slice_cols: [{start}, {end}) out of bounds for {cols} columns")
            }
            Error::LengthMismatch { rows, cols, len } => {
                write!(f, "value buffer of length {len} does not match {rows}x{cols}")
            }
            Error::EmptyExpertList => {
                write!(f, "poe_combine: empty expert list without prior expert")
            }
            Error::EmptyEncodeSet => write!(f, "bound term requires a non-empty encode set"),
            Error::MissingLabels => write!(f, "supervised objective but batch has no labels"),
            Error::InvalidConfig(msg) => write!(f, "invalid config: {msg}"),
            Error::CholeskyFailed { size, attempts } => write!(
                f,
                "cholesky of {size}x{size} kernel failed after {attempts} jitter escalations"
            ),
            Error::ZeroVarianceColumns { context, columns } => {
                write!(f, "{context}: zero-variance columns {columns:?}")
            }
            Error::RowCountMismatch { what, left, right } => {
                write!(f, "{what}: row counts disagree, {left} vs {right}")
            }
            Error::SingleClassLabels { context } => {
                write!(f, "{context}: labels contain a single class")
            }
            Error::TooFewRows { context, rows } => {
                write!(f, "{context}: needs at least 2 rows, got {rows}")
            }
            Error::NonFiniteLoss { epoch, batch } => {
                write!(f, "non-finite loss at epoch {epoch}, batch {batch}")
            }
        }
    }
}

impl core::error::Error for Error {}
