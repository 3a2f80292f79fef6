//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by any hermnet operation.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shape mismatch, with a diagnostic describing the offending op.
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// Elementwise division hit a zero denominator.
    #[error("division by zero in {op} (callers must pre-guard denominators)")]
    DivisionByZero { op: &'static str },

    /// A parse error with file/line locus.
    #[error("{file}:{line}: {msg}")]
    Parse {
        file: String,
        line: usize,
        msg: String,
    },

    /// Config file error with line locus.
    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },

    /// Structure validation failure (bad cell, length mismatch, ...).
    #[error("invalid structure: {0}")]
    Structure(String),

    /// Dataset-level inconsistency (frame-count mismatch, oversubscribed split, ...).
    #[error("{0}")]
    Dataset(String),

    /// An element occurs in a graph but has no parameter block
    /// (unseen at training time).
    #[error("element vocabulary mismatch: {0}")]
    Vocabulary(String),

    /// Least-squares reference fit is rank deficient.
    #[error(
        "reference-energy fit is rank deficient ({0}); supply per-element references manually"
    )]
    RankDeficient(String),

    /// Training loss became non-finite.
    #[error("non-finite loss at epoch {epoch} (learning rate too high or exploding gradients)")]
    NonFiniteLoss { epoch: usize },

    /// Malformed checkpoint file.
    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
