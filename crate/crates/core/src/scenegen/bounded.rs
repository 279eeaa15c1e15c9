use super::{MeshModel, SceneError};
use crate::camera::{CameraIntrinsics, ProjectedVertex, VertexStatus};
use crate::imaging::Image;

/// Each side of the box grows by this fraction of its extent.
pub const BOUNDED_MARGIN: f64 = 0.1;

/// Crops smaller than this (px²) after margin and clamping are rejected.
pub const MIN_BOUNDED_AREA: f64 = 4.0;

/// Clips segment `a → b` to `[0, w] × [0, h]` (Liang–Barsky).
fn clip_segment(a: [f64; 2], b: [f64; 2], w: f64, h: f64) -> Option<[[f64; 2]; 2]> {
    let d = [b[0] - a[0], b[1] - a[1]];
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for (p, q) in [(-d[0], a[0]), (d[0], w - a[0]), (-d[1], a[1]), (d[1], h - a[1])] {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
        }
    }
    (t0 <= t1).then(|| [t0, t1].map(|t| [a[0] + t * d[0], a[1] + t * d[1]]))
}

/// Bounding box, in pixel-edge coordinates, of the reprojected mesh
/// clipped to the frame: the in-frame vertices plus the points where
/// projected triangle edges cross the frame border.
pub fn bbox_from_vertices(
    projected: &[ProjectedVertex],
    mesh: &MeshModel,
    k: &CameraIntrinsics<f64>,
) -> Result<[f64; 4], SceneError> {
    let (w, h) = (k.width as f64, k.height as f64);
    let mut b = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
    let mut grow = |p: [f64; 2]| {
        b[0] = b[0].min(p[0]);
        b[1] = b[1].min(p[1]);
        b[2] = b[2].max(p[0]);
        b[3] = b[3].max(p[1]);
    };
    for p in projected {
        if let (VertexStatus::InFrame, Some(pt)) = (p.status, p.point) {
            grow([pt.u, pt.v]);
        }
    }
    for tri in &mesh.triangles {
        for (i, j) in [(0, 1), (1, 2), (2, 0)] {
            let (Some(a), Some(c)) = (projected[tri[i]].point, projected[tri[j]].point) else {
                continue;
            };
            if let Some(seg) = clip_segment([a.u, a.v], [c.u, c.v], w, h) {
                seg.into_iter().for_each(&mut grow);
            }
        }
    }
    if !(b[2] > b[0] && b[3] > b[1]) {
        return Err(if b[0].is_finite() {
            SceneError::EmptyBBox(b)
        } else {
            SceneError::ObjectOutOfFrame
        });
    }
    Ok(b)
}

/// Crops `bbox` grown by [`BOUNDED_MARGIN`] and clamped to the frame, then
/// resizes it bilinearly to `width × height`.
pub fn make_bounded_image(image: &Image, bbox: [f64; 4], width: usize, height: usize) -> Result<Image, SceneError> {
    let [x0, y0, x1, y1] = bbox;
    if !(x1 > x0 && y1 > y0) {
        return Err(SceneError::EmptyBBox(bbox));
    }
    let (mx, my) = (BOUNDED_MARGIN * (x1 - x0), BOUNDED_MARGIN * (y1 - y0));
    let (w, h) = (image.width as f64, image.height as f64);
    let region = [
        (x0 - mx).clamp(0.0, w),
        (y0 - my).clamp(0.0, h),
        (x1 + mx).clamp(0.0, w),
        (y1 + my).clamp(0.0, h),
    ];
    if (region[2] - region[0]) * (region[3] - region[1]) < MIN_BOUNDED_AREA {
        return Err(SceneError::EmptyBBox(bbox));
    }
    Ok(image.resample_region(region, width, height))
}
