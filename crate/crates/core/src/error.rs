use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid architecture, config file or shape wiring.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("configuration error at line {line}: {message}")]
    ConfigLine { line: usize, message: String },

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    /// NaN or infinity encountered where a finite value is required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// API misuse: missing gradients, undersized batches, misaligned reports.
    #[error("usage error: {0}")]
    Usage(String),

    /// Malformed binary input (IDX, checkpoint).
    #[error("format error: {0}")]
    Format(String),

    /// Data outside the accepted domain.
    #[error("input error: {0}")]
    Input(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric(_) => 2,
            _ => 1,
        }
    }
}
