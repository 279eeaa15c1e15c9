//! Synthetic dataset generation: truss mesh, pose sampling, rasterization,
//! bounded crops, labels and the on-disk dataset layout.

mod bounded;
mod dataset;
mod mesh;
mod render;
mod sampling;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Pose;
use crate::imaging::{Image, ImagingError, Mask};

pub use bounded::{bbox_from_vertices, make_bounded_image, BOUNDED_MARGIN, MIN_BOUNDED_AREA};
pub use dataset::{
    assign_splits, generate_dataset, generate_sample, generate_samples, load_dataset, load_manifest, load_sample, label_path,
    sample_paths, DatasetManifest, LabelRecord, LoadedDataset, LoadedSample, SampleRecord, SceneConfig,
    MANIFEST_FILE,
};
pub use mesh::{build_truss, MeshModel, TrussDims};
pub use render::{render, RenderConfig, Rendered};
pub use sampling::{sample_pose, sample_rotation, PoseSampling};

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("invalid truss dimensions {length} x {width} x {depth}")]
    InvalidDimensions { length: f64, width: f64, depth: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("no triangle rasterized inside the frame")]
    ObjectOutOfFrame,
    #[error("bounding box {0:?} is empty")]
    EmptyBBox([f64; 4]),
    #[error("sample {index} failed validation: {fraction:.3} of in-frame vertices on the mask")]
    Validation { index: usize, fraction: f64 },
    #[error("sample {index}: {source}")]
    Sample {
        index: usize,
        #[source]
        source: Box<SceneError>,
    },
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

impl SceneError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        SceneError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub(crate) fn json(path: &std::path::Path, source: serde_json::Error) -> Self {
        SceneError::Json {
            path: path.display().to_string(),
            source,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One rendered, labelled sample held in memory.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub index: usize,
    pub image: Image,
    pub bounded_image: Image,
    /// Rendered object coverage at output resolution.
    pub mask: Mask,
    /// Object pose in the camera frame.
    pub pose: Pose<f64>,
    /// `[x0, y0, x1, y1]` in pixel-edge coordinates.
    pub bbox: [f64; 4],
    pub distance: f64,
    pub split: Split,
}
