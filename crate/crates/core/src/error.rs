//! Crate-wide error type and result alias.

use thiserror::Error;

/// Errors surfaced by the library. Variants carry enough context to be
/// actionable without a backtrace: shape errors name the operation and both
/// shapes, parse errors carry the line number, numerical errors name the
/// offending tensor.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch, left is {lhs_rows}x{lhs_cols}, right is {rhs_rows}x{rhs_cols}")]
    Shape {
        op: &'static str,
        lhs_rows: usize,
        lhs_cols: usize,
        rhs_rows: usize,
        rhs_cols: usize,
    },

    #[error("{what}: zero-norm vector, similarity is undefined")]
    ZeroNorm { what: &'static str },

    #[error("token id {token} out of range for vocabulary of size {vocab_size}")]
    Vocab { token: usize, vocab_size: usize },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("bad file format: {0}")]
    Format(String),

    #[error("bad data: {0}")]
    Data(String),

    #[error("bad configuration: {0}")]
    Config(String),

    #[error("correlation undefined: {0}")]
    Correlation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
