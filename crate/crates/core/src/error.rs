use std::path::PathBuf;

use crate::volume::Dims;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("data length {found} does not match dims {dims:?} (expected {expected})")]
    DataLength {
        dims: Dims,
        expected: usize,
        found: usize,
    },

    #[error("dimensions must be positive, got {0:?}")]
    EmptyDims(Dims),

    #[error("grid mismatch: expected {expected:?}, found {found:?}")]
    DimMismatch { expected: Dims, found: Dims },

    #[error("channel count mismatch: expected {expected}, found {found}")]
    ChannelMismatch { expected: usize, found: usize },

    #[error("invalid intensity window: lo ({lo}) must be below hi ({hi})")]
    InvalidWindow { lo: f64, hi: f64 },

    #[error("unknown label `{name}`; available labels: {}", available.join(", "))]
    UnknownLabel { name: String, available: Vec<String> },

    #[error("non-finite value in {stage} ({term})")]
    NonFinite { stage: String, term: String },

    #[error("sample set is empty")]
    EmptySamples,

    #[error("registration aborted in {stage}")]
    Aborted {
        stage: String,
        #[source]
        source: Box<Error>,
        /// Cascade as it stood before the failing stage.
        partial: Box<crate::optimizer::CascadeState>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid phantom: {0}")]
    Phantom(String),

    #[error(transparent)]
    Format(#[from] FormatError),

    #[error("i/o error on {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Decoding failures for the VVOL1 container. Offsets are byte positions in the file.
#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic at byte 0: expected \"VVOL1\", found {found:?}")]
    BadMagic { found: Vec<u8> },

    #[error("unsupported dtype tag {tag} at byte {offset}")]
    UnsupportedDtype { tag: u8, offset: usize },

    #[error("truncated file at byte {offset}: expected {expected} bytes, found {actual}")]
    Truncated {
        offset: usize,
        expected: usize,
        actual: usize,
    },

    #[error("dimension overflow at byte {offset}: {dims:?} x {channels} channels")]
    DimOverflow {
        offset: usize,
        dims: [u64; 3],
        channels: u32,
    },

    #[error("zero-sized dimension at byte {offset}: {dims:?}")]
    ZeroDim { offset: usize, dims: [u64; 3] },

    #[error("channel name at byte {offset} is not valid UTF-8")]
    InvalidName { offset: usize },

    #[error("{extra} trailing bytes after payload at byte {offset}")]
    TrailingBytes { offset: usize, extra: usize },
}
