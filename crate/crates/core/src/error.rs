use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed json metadata: {0}")]
    Json(#[from] serde_json::Error),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("truncated payload: needed {expected} bytes, file has {found}")]
    TruncatedPayload { expected: usize, found: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("record {id}: non-finite value at component {component}")]
    NonFinite { id: u32, component: usize },

    #[error("record {id}: label {label} out of range for {num_classes} classes")]
    InvalidLabel { id: u32, label: i64, num_classes: usize },

    #[error("record {id}: part label {part} out of range for {num_parts} parts")]
    InvalidPart { id: u32, part: i64, num_parts: usize },

    #[error("sample {sample}: part {part} is not valid for class {class}")]
    PartNotValidForClass { sample: usize, part: u32, class: u32 },

    #[error("sample {sample} has {found} parts, at most {max} are supported")]
    TooManyParts { sample: usize, found: usize, max: usize },

    #[error("invalid feature set: {0}")]
    InvalidSet(String),

    #[error("invalid positional encoding: {0}")]
    InvalidEncoding(String),

    #[error("missing field: {0}")]
    MissingField(&'static str),

    #[error("encoding of the query does not match the store's encoding")]
    EncodingMismatch,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("object class {0} has no prototypes in the store")]
    ScopeClassAbsent(u32),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid split fractions: {0}")]
    InvalidFractions(String),

    #[error("cloud has {found} points, at least {min} are required")]
    TooFewPoints { found: usize, min: usize },

    #[error("training data must contain at least two classes")]
    SingleClass,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
