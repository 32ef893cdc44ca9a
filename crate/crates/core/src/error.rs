use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("mesh parse error: {0}")]
    MeshParse(String),

    #[error("triangle {triangle} references vertex {index} but the mesh has {vertex_count} vertices")]
    IndexOutOfRange { triangle: usize, index: usize, vertex_count: usize },

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("invalid camera pose: {0}")]
    InvalidPose(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("class {label:?}, image {index}: region of interest not visible after {attempts} pose draws")]
    RoiUnsatisfiable { label: String, index: usize, attempts: usize },

    #[error("image decode error: {0}")]
    ImageDecode(String),

    #[error("image encode error: {0}")]
    ImageEncode(String),

    #[error("image has zero width or height")]
    EmptyImage,

    #[error("model error: {0}")]
    Model(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },

    #[error("batch item {index} failed: {source}")]
    BatchItem {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("vector has zero norm")]
    ZeroVector,

    #[error("vector has a non-finite component at position {0}")]
    NonFinite(usize),

    #[error("label must be non-empty")]
    EmptyLabel,

    #[error("reference index is empty")]
    EmptyIndex,

    #[error("bad magic bytes in index file")]
    BadMagic,

    #[error("unsupported index file version {0}")]
    UnsupportedVersion(u16),

    #[error("index file is truncated")]
    Truncated,

    #[error("index file checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    ChecksumMismatch { stored: u32, computed: u32 },

    #[error("corrupt index file: {0}")]
    Corrupt(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("serialization error: {0}")]
    Serialize(String),
}

impl Error {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }
}
