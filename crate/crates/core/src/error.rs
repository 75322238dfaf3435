use thiserror::Error;

/// Errors raised by the codec, controllers and trainer.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A caller passed a value outside an operation's domain.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A float with an all-ones exponent reached a quantizer or the packer
    /// without the non-finite bypass.
    #[error("non-finite value (bits {bits:#x}) rejected")]
    NonFinite { bits: u32 },

    /// A negative value was handed to a signless encoding.
    #[error("negative value (bits {bits:#x}) at index {index} in a signless tensor")]
    NegativeInSignless { index: usize, bits: u32 },

    /// A stream or encoding is malformed. `offset` is a byte offset into the
    /// offending stream when one is meaningful.
    #[error("corrupt data at byte {offset}: {reason}")]
    Corrupt { offset: usize, reason: String },

    /// A numeric computation produced an unusable result.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn corrupt(offset: usize, reason: impl Into<String>) -> Self {
        Error::Corrupt {
            offset,
            reason: reason.into(),
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
