//! Readers and writers for every on-disk format the tracker consumes or
//! produces: detection streams (JSON lines plus an optional binary embedding
//! sidecar), vocabularies, fusion weight bundles, ground truth and track
//! output.

mod detections;
mod groundtruth;
mod sidecar;
mod tracks;
mod vocab;
mod weights;

use std::path::PathBuf;

use thiserror::Error;

pub use detections::{
    canonical_cmp, load_detections, load_detections_with_vocab, write_detections, BBox,
    DetectionRecord, FrameMap,
};
pub use groundtruth::{load_groundtruth, write_groundtruth, GroundTruthTrack};
pub use sidecar::{read_sidecar, sidecar_path, write_sidecar, EmbeddingSidecar};
pub use tracks::{
    read_tracks, write_tracks, LabelRecord, LabelSource, ObservationRecord, ScoredLabel,
    TrackRecord, TripletScores,
};
pub use vocab::{load_vocabulary, write_vocabulary, Split, Vocabulary, VocabularyEntry};
pub use weights::{load_weights, write_weights, Tensor, WeightBundle, WEIGHTS_VERSION};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: embedding has length {found}, expected {expected}")]
    EmbeddingLength {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: unknown category id {id}")]
    UnknownCategory { line: usize, id: u32 },
    #[error("duplicate category id {0}")]
    DuplicateCategory(u32),
    #[error("category {id}: {field} has length {found}, expected {expected}")]
    DimMismatch {
        id: u32,
        field: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("category {id}: missing {field}")]
    MissingEmbedding { id: u32, field: &'static str },
    #[error("category {id}: split {value:?} is not one of base, novel")]
    InvalidSplit { id: u32, value: String },
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {found} (supported: {supported})")]
    VersionMismatch { found: u16, supported: u16 },
    #[error("file is truncated")]
    Truncated,
    #[error("tensor {0} contains a non-finite value")]
    NonFinite(String),
    #[error("tensor {name}: {message}")]
    Shape { name: String, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = IngestError> = std::result::Result<T, E>;

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    }
}
