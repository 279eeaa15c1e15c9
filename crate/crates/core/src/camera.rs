//! Pinhole projection and reprojection-based label validation.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{cast, Pose};
use crate::imaging::{draw_cross, Image, ImagingError, Mask};
use crate::scenegen::MeshModel;
use crate::Real;

/// Points closer to the image plane than this (metres) cannot be projected.
pub const MIN_DEPTH: f64 = 1e-6;

/// Dilation applied to the rendered object mask before vertex testing.
pub const MASK_DILATION_PX: usize = 2;

/// Minimum fraction of in-frame vertices that must land on the dilated mask.
pub const VALIDATION_THRESHOLD: f64 = 0.95;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CameraError {
    #[error("point at depth {0} m is behind the camera")]
    BehindCamera(f64),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
}

/// Pinhole intrinsics without distortion. Pixel `(i, j)` covers
/// `[i, i+1) × [j, j+1)` in continuous image coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraIntrinsics<T> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub width: u32,
    pub height: u32,
}

impl<T: Real> CameraIntrinsics<T> {
    pub fn new(fx: T, fy: T, cx: T, cy: T, width: u32, height: u32) -> Result<Self, CameraError> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    /// Default synthetic camera: `fx = fy = 280`, principal point at the
    /// centre of a 224×224 frame, rescaled to `width × height`.
    pub fn synthetic(width: u32, height: u32) -> Self {
        let base = Self {
            fx: cast(280.0),
            fy: cast(280.0),
            cx: cast(112.0),
            cy: cast(112.0),
            width: 224,
            height: 224,
        };
        base.scaled_to(width, height)
    }

    /// Same field of view and principal point at another resolution.
    pub fn scaled_to(&self, width: u32, height: u32) -> Self {
        let sx: T = cast::<T>(width) / cast(self.width);
        let sy: T = cast::<T>(height) / cast(self.height);
        Self {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: self.cx * sx,
            cy: self.cy * sy,
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        let ok = self.fx > T::zero()
            && self.fy > T::zero()
            && self.cx >= T::zero()
            && self.cy >= T::zero()
            && self.cx < cast(self.width)
            && self.cy < cast(self.height);
        if ok {
            Ok(())
        } else {
            Err(CameraError::InvalidIntrinsics(format!("{self:?}")))
        }
    }

    pub fn in_frame(&self, p: &PixelPoint<T>) -> bool {
        p.u >= T::zero() && p.v >= T::zero() && p.u < cast(self.width) && p.v < cast(self.height)
    }

    /// Unit ray through continuous pixel `(u, v)`.
    pub fn ray(&self, u: T, v: T) -> [T; 3] {
        let d = [(u - self.cx) / self.fx, (v - self.cy) / self.fy, T::one()];
        let n = crate::geometry::norm3(d);
        d.map(|c| c / n)
    }

    pub fn cast<U: Real>(&self) -> CameraIntrinsics<U> {
        CameraIntrinsics {
            fx: cast(self.fx.to_f64().unwrap_or(0.0)),
            fy: cast(self.fy.to_f64().unwrap_or(0.0)),
            cx: cast(self.cx.to_f64().unwrap_or(0.0)),
            cy: cast(self.cy.to_f64().unwrap_or(0.0)),
            width: self.width,
            height: self.height,
        }
    }
}

/// Continuous pixel coordinates plus camera-frame depth.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PixelPoint<T> {
    pub u: T,
    pub v: T,
    pub depth: T,
}

/// Projects a camera-frame point.
pub fn project_camera_point<T: Real>(k: &CameraIntrinsics<T>, p: [T; 3]) -> Result<PixelPoint<T>, CameraError> {
    let [x, y, z] = p;
    if !(z > cast(MIN_DEPTH)) {
        return Err(CameraError::BehindCamera(z.to_f64().unwrap_or(f64::NAN)));
    }
    Ok(PixelPoint {
        u: k.fx * x / z + k.cx,
        v: k.fy * y / z + k.cy,
        depth: z,
    })
}

/// `p_cam = R·p_world + t`, then the perspective divide through `K`.
pub fn project<T: Real>(k: &CameraIntrinsics<T>, pose: &Pose<T>, p_world: [T; 3]) -> Result<PixelPoint<T>, CameraError> {
    project_camera_point(k, pose.transform(p_world))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VertexStatus {
    InFrame,
    OutOfFrame,
    BehindCamera,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectedVertex {
    pub index: usize,
    pub status: VertexStatus,
    /// Absent only for vertices behind the camera.
    pub point: Option<PixelPoint<f64>>,
}

/// Projects every mesh vertex, flagging the ones that fall outside the
/// frame or behind the camera.
pub fn reproject_vertices(k: &CameraIntrinsics<f64>, pose: &Pose<f64>, mesh: &MeshModel) -> Vec<ProjectedVertex> {
    mesh.vertices
        .iter()
        .enumerate()
        .map(|(index, &v)| match project(k, pose, v) {
            Ok(p) => ProjectedVertex {
                index,
                status: if k.in_frame(&p) {
                    VertexStatus::InFrame
                } else {
                    VertexStatus::OutOfFrame
                },
                point: Some(p),
            },
            Err(_) => ProjectedVertex {
                index,
                status: VertexStatus::BehindCamera,
                point: None,
            },
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub index: usize,
    pub vertices: usize,
    pub in_frame: usize,
    pub out_of_frame: usize,
    pub behind_camera: usize,
    pub inside_mask: usize,
    /// `inside_mask / in_frame`; zero when nothing is in frame.
    pub fraction: f64,
    pub passed: bool,
}

/// Checks a pose label against the rendered object mask: at least
/// [`VALIDATION_THRESHOLD`] of the in-frame reprojected vertices must fall
/// on the mask dilated by [`MASK_DILATION_PX`].
pub fn validate_pose(
    index: usize,
    mask: &Mask,
    pose: &Pose<f64>,
    mesh: &MeshModel,
    k: &CameraIntrinsics<f64>,
) -> (ValidationReport, Vec<ProjectedVertex>) {
    let dilated = mask.dilate(MASK_DILATION_PX);
    let projected = reproject_vertices(k, pose, mesh);
    let count = |s: VertexStatus| projected.iter().filter(|p| p.status == s).count();
    let in_frame = count(VertexStatus::InFrame);
    let inside_mask = projected
        .iter()
        .filter(|p| p.status == VertexStatus::InFrame)
        .filter(|p| p.point.is_some_and(|pt| dilated.contains(pt.u, pt.v)))
        .count();
    let fraction = if in_frame == 0 {
        0.0
    } else {
        inside_mask as f64 / in_frame as f64
    };
    let report = ValidationReport {
        index,
        vertices: projected.len(),
        in_frame,
        out_of_frame: count(VertexStatus::OutOfFrame),
        behind_camera: count(VertexStatus::BehindCamera),
        inside_mask,
        fraction,
        passed: in_frame > 0 && fraction >= VALIDATION_THRESHOLD,
    };
    (report, projected)
}

pub fn validate_label(
    sample: &crate::scenegen::Sample,
    mesh: &MeshModel,
    k: &CameraIntrinsics<f64>,
) -> ValidationReport {
    validate_pose(sample.index, &sample.mask, &sample.pose, mesh, k).0
}

/// Writes `image` with every in-frame reprojected vertex marked: green on
/// the dilated mask, red off it.
pub fn write_overlay(path: &Path, image: &Image, mask: &Mask, projected: &[ProjectedVertex]) -> Result<(), ImagingError> {
    let dilated = mask.dilate(MASK_DILATION_PX);
    let mut rgb = image.to_rgb8();
    for p in projected {
        if let (VertexStatus::InFrame, Some(pt)) = (p.status, p.point) {
            let color = if dilated.contains(pt.u, pt.v) {
                [0, 255, 0]
            } else {
                [255, 0, 0]
            };
            draw_cross(&mut rgb, pt.u, pt.v, 1, color);
        }
    }
    rgb.save(path).map_err(|source| ImagingError::Codec {
        path: path.display().to_string(),
        source,
    })
}
