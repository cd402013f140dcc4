//! On-disk formats and dataset plumbing.
//!
//! All binary files are little-endian. Embedding and classifier-weight files
//! share one container layout ("MHE1") with a line-per-record `.ids` sidecar;
//! checkpoints use "MHC1". Decoders reject short or overlong files instead of
//! returning partial data.

mod checkpoint;
mod container;
mod labels;
mod split;

use std::path::PathBuf;

pub use checkpoint::{load_checkpoint, load_checkpoint_for, save_checkpoint, CheckpointMeta};
pub use container::{
    read_classifier_weights, read_embedding_container, sidecar_path, write_classifier_weights,
    write_embedding_container, ClassifierWeights, EmbeddingSet, CONTAINER_MAGIC,
};
pub use labels::{read_labels, write_labels, LabelTable};
pub use split::{stratified_split, SplitAssignment};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic {found:02x?}, expected {expected:02x?}")]
    BadMagic { found: [u8; 4], expected: [u8; 4] },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u32),
    #[error("truncated payload: header promises {expected} bytes, file holds {actual}")]
    TruncatedPayload { expected: u64, actual: u64 },
    #[error("trailing data: header accounts for {expected} bytes, file holds {actual}")]
    TrailingData { expected: u64, actual: u64 },
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("manifest lists {found} records, container holds {expected}")]
    ManifestMismatch { expected: usize, found: usize },
    #[error("class manifest lists {manifest} classes, header declares {header}")]
    ClassCountMismatch { header: usize, manifest: usize },
    #[error("temperature must be strictly positive, got {0}")]
    NonPositiveTemperature(f32),
    #[error("weight file has no temperature field")]
    MissingTemperature,
    #[error("invalid container contents: {0}")]
    Invalid(String),
    #[error("line {line}: unknown class name {name:?}")]
    UnknownClassName { line: usize, name: String },
    #[error("duplicate image id {0:?} in label table")]
    DuplicateImageId(String),
    #[error("line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("image id {0:?} not present in the embedding set")]
    UnknownImageId(String),
    #[error("empty input")]
    EmptyInput,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}
