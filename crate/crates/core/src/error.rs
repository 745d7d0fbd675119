use std::io;

use thiserror::Error;

/// Errors raised by the enhancement engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("format error: {0}")]
    Format(#[from] FormatError),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),

    /// The sampling state became non-finite.
    #[error("non-finite state at step {step} (t = {t}): mse = {mse}, exposure = {exposure}, f = {gain}")]
    NonFinite {
        step: usize,
        t: usize,
        mse: f64,
        exposure: f64,
        gain: f64,
    },
}

/// Problems with the binary tensor and weight formats.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("truncated file: needed {needed} bytes, found {found}")]
    Truncated { needed: usize, found: usize },

    #[error("parameter count mismatch: descriptor implies {expected}, header declares {declared}")]
    ParameterCount { expected: usize, declared: usize },

    #[error("invalid architecture: {0}")]
    Architecture(String),

    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
