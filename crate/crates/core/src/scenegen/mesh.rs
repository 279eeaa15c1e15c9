use serde::{Deserialize, Serialize};

use super::SceneError;
use crate::geometry::Quaternion;

/// Triangle mesh in the object frame (metres).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeshModel {
    pub name: String,
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[usize; 3]>,
}

/// Bounding dimensions of the truss along x, y and z.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrussDims {
    pub length: f64,
    pub width: f64,
    pub depth: f64,
}

impl Default for TrussDims {
    fn default() -> Self {
        Self {
            length: 0.38,
            width: 0.2,
            depth: 0.05,
        }
    }
}

const PANELS: usize = 4;

impl MeshModel {
    pub fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for v in &self.vertices {
            for i in 0..3 {
                lo[i] = lo[i].min(v[i]);
                hi[i] = hi[i].max(v[i]);
            }
        }
        (lo, hi)
    }

    pub fn extent(&self) -> [f64; 3] {
        let (lo, hi) = self.bounds();
        [hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]]
    }

    pub fn indices_in_range(&self) -> bool {
        self.triangles.iter().flatten().all(|&i| i < self.vertices.len())
    }

    /// Largest distance from a vertex of the mesh rotated by `rotation` to
    /// its nearest unrotated vertex. Zero means the rotation maps the vertex
    /// set onto itself.
    pub fn self_mismatch(&self, rotation: Quaternion<f64>) -> f64 {
        self.vertices
            .iter()
            .map(|&v| {
                let r = rotation.rotate(v);
                self.vertices
                    .iter()
                    .map(|w| ((r[0] - w[0]).powi(2) + (r[1] - w[1]).powi(2) + (r[2] - w[2]).powi(2)).sqrt())
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max)
    }

    fn push_prism(&mut self, corners: [[f64; 2]; 4], z0: f64, z1: f64) {
        let base = self.vertices.len();
        for z in [z0, z1] {
            for c in corners {
                self.vertices.push([c[0], c[1], z]);
            }
        }
        let (b, t) = (base, base + 4);
        self.triangles.extend([[b, b + 2, b + 1], [b, b + 3, b + 2], [t, t + 1, t + 2], [t, t + 2, t + 3]]);
        for i in 0..4 {
            let j = (i + 1) % 4;
            self.triangles.extend([[b + i, b + j, t + j], [b + i, t + j, t + i]]);
        }
    }

    fn push_strut(&mut self, a: [f64; 2], b: [f64; 2], half: f64, z0: f64, z1: f64) {
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        let len = (dx * dx + dy * dy).sqrt();
        let (nx, ny) = (-dy / len * half, dx / len * half);
        self.push_prism(
            [
                [a[0] + nx, a[1] + ny],
                [b[0] + nx, b[1] + ny],
                [b[0] - nx, b[1] - ny],
                [a[0] - nx, a[1] - ny],
            ],
            z0,
            z1,
        );
    }
}

/// Planar box truss centred on the origin: two chords along x, posts and
/// same-handed diagonals between them, all extruded through the full depth.
/// The post at the +x end is left out, so no 180° rotation about a principal
/// axis maps the truss onto itself.
pub fn build_truss(length: f64, width: f64, depth: f64) -> Result<MeshModel, SceneError> {
    let valid = |d: f64| d.is_finite() && d > 0.0;
    if !(valid(length) && valid(width) && valid(depth)) {
        return Err(SceneError::InvalidDimensions { length, width, depth });
    }
    let (hl, hw, hd) = (length / 2.0, width / 2.0, depth / 2.0);
    let s = 0.1 * length.min(width);
    let half = s / 2.0;
    let mut mesh = MeshModel {
        name: "truss".into(),
        vertices: Vec::new(),
        triangles: Vec::new(),
    };
    // chords
    mesh.push_prism([[-hl, hw - s], [hl, hw - s], [hl, hw], [-hl, hw]], -hd, hd);
    mesh.push_prism([[-hl, -hw], [hl, -hw], [hl, -hw + s], [-hl, -hw + s]], -hd, hd);
    let pitch = (length - s) / PANELS as f64;
    let post_x = |i: usize| -hl + half + i as f64 * pitch;
    // posts, except the last one
    for i in 0..PANELS {
        let x = post_x(i);
        mesh.push_prism(
            [
                [x - half, -hw + s],
                [x + half, -hw + s],
                [x + half, hw - s],
                [x - half, hw - s],
            ],
            -hd,
            hd,
        );
    }
    for i in 0..PANELS {
        mesh.push_strut([post_x(i) + half, -hw + s], [post_x(i + 1) - half, hw - s], half, -hd, hd);
    }
    Ok(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn bounding_box_matches_requested_dimensions() {
        let m = build_truss(0.38, 0.2, 0.05).unwrap();
        let e = m.extent();
        assert!((e[0] - 0.38).abs() < 1e-12 && (e[1] - 0.2).abs() < 1e-12 && (e[2] - 0.05).abs() < 1e-12, "{e:?}");
        let (lo, hi) = m.bounds();
        for i in 0..3 {
            assert!((lo[i] + hi[i]).abs() < 1e-12);
        }
        assert!(m.indices_in_range());
    }

    #[test]
    fn asymmetric_under_half_turns() {
        let m = build_truss(0.38, 0.2, 0.05).unwrap();
        for axis in [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]] {
            let d = m.self_mismatch(Quaternion::from_axis_angle(axis, PI));
            assert!(d > 1e-3, "axis {axis:?}: mismatch {d}");
        }
        assert!(m.self_mismatch(Quaternion::identity()) < 1e-15);
    }

    #[test]
    fn deterministic_topology() {
        let a = build_truss(0.38, 0.2, 0.05).unwrap();
        let b = build_truss(0.38, 0.2, 0.05).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.vertices.len(), 80);
        assert_eq!(a.triangles.len(), 120);
    }

    #[test]
    fn rejects_bad_dimensions() {
        assert!(matches!(build_truss(0.0, 0.2, 0.05), Err(SceneError::InvalidDimensions { .. })));
        assert!(build_truss(0.38, -1.0, 0.05).is_err());
        assert!(build_truss(0.38, 0.2, f64::NAN).is_err());
    }
}
