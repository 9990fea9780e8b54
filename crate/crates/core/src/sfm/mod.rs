//! Structure-from-motion ingestion: COLMAP text models, key-frame selection, the
//! pixel-to-point dataset, PFM depth maps and PLY point clouds.

mod colmap;
mod dataset;
mod pfm;
mod ply;

pub use colmap::{
    parse_colmap_model, parse_colmap_text, write_colmap_model, CameraIntrinsics, Feature, ImageRecord, Point3D,
    SparseModel, TrackElement,
};
pub use dataset::{
    build_pixel_dataset, read_dataset_csv, select_key_frames, split_dataset, write_dataset_csv, PixelSample,
    PixelToPointDataset, Sample, SplitDataset, TargetVector,
};
pub use pfm::{read_depth_pfm, write_depth_pfm, DepthMap, INVALID_DEPTH};
pub use ply::{read_ply, write_ply};

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SfmError {
    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),

    #[error("{file}:{line}: {message}")]
    MalformedLine { file: String, line: usize, message: String },

    #[error("dangling reference: {0}")]
    DanglingReference(String),

    #[error("unknown image id {0}")]
    UnknownImage(u32),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("no image has any 2D-3D correspondence")]
    NoCorrespondences,

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("bad PFM magic `{0}` (expected `Pf`)")]
    BadMagic(String),

    #[error("bad PFM dimensions: {0}")]
    BadDims(String),

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },

    #[error("unsupported PLY property: {0}")]
    UnsupportedProperty(String),

    #[error("malformed PLY: {0}")]
    PlyFormat(String),

    #[error("I/O failure on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl SfmError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            SfmError::MissingFile(path)
        } else {
            SfmError::Io { path, source }
        }
    }
}
