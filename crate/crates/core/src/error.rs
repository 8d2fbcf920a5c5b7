use thiserror::Error;

/// Crate-wide error type.
///
/// The variants map onto the failure categories surfaced by the CLI:
/// `Dimension`, `Config`, `Contract`, `Input` and `Validation` are caller
/// mistakes (exit code 2), everything else is a runtime failure (exit code 1).
#[derive(Error, Debug)]
pub enum Error {
    /// Tensor shape mismatch; the message names both offending shapes.
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    /// Invalid static configuration (unsupported scale, indivisible channels, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// API contract violation (non-scalar loss, mismatched optimizer state, ...).
    #[error("contract error: {0}")]
    Contract(String),

    /// Invalid runtime input (empty corpus, empty batch, bad bbox, ...).
    #[error("input error: {0}")]
    Input(String),

    /// Checkpoint or config failed structural validation.
    #[error("validation error: {0}")]
    Validation(String),

    /// Corrupt checkpoint payload.
    #[error("checksum mismatch: {0}")]
    Checksum(String),

    /// Malformed file; `offset` is the byte position where parsing failed.
    #[error("parse error at byte {offset}: {msg}")]
    Parse { offset: usize, msg: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    /// True for errors caused by bad user input rather than runtime failure.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Dimension { .. }
                | Error::Config(_)
                | Error::Contract(_)
                | Error::Input(_)
                | Error::Validation(_)
        )
    }
}
