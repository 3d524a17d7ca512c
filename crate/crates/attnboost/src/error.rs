use std::path::PathBuf;

/// Failures while reading or writing one of the crate's file formats.
#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad magic bytes, expected {0:?}")]
    BadMagic(&'static str),
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("file ends early")]
    Truncated,
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Core(#[from] attnboost_core::Error),
    #[error("png decode: {0}")]
    PngDecode(#[from] png::DecodingError),
    #[error("png encode: {0}")]
    PngEncode(#[from] png::EncodingError),
}

/// A read through an audited accessor that the policy refused.
#[derive(Debug, thiserror::Error)]
#[error("access to {path} refused: {reason}")]
pub struct AccessDenied {
    pub path: PathBuf,
    pub reason: String,
}
