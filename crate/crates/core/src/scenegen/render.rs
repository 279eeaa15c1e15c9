//! Z-buffered flat-shaded rasterization at a high render resolution,
//! box-filtered down to the training resolution.

use rand::Rng;
use rand_distr::{Distribution, Geometric};
use serde::{Deserialize, Serialize};

use super::{MeshModel, SceneError};
use crate::camera::CameraIntrinsics;
use crate::geometry::{cross3, dot3, norm3, Pose};
use crate::imaging::{area_downsample, Image, Mask};

/// Triangles with a vertex closer than this (metres) are not drawn.
const NEAR_PLANE: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderConfig {
    pub render_width: u32,
    pub render_height: u32,
    pub channels: usize,
    pub ambient: f32,
    /// Per-background-pixel probability of a white star at render
    /// resolution; zero disables the star field.
    pub star_probability: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            render_width: 1280,
            render_height: 720,
            channels: 3,
            ambient: 0.02,
            star_probability: 0.001,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rendered {
    pub image: Image,
    /// Output pixels touched by any rasterized object pixel.
    pub mask: Mask,
}

fn edge(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

/// Renders `mesh` at `pose` under a directional light. `k` describes the
/// output camera; rasterization happens at the configured render size with
/// the same field of view.
pub fn render<R: Rng + ?Sized>(
    mesh: &MeshModel,
    pose: &Pose<f64>,
    k: &CameraIntrinsics<f64>,
    light_dir: [f64; 3],
    config: &RenderConfig,
    star_rng: &mut R,
) -> Result<Rendered, SceneError> {
    let (rw, rh) = (config.render_width as usize, config.render_height as usize);
    let kr = k.scaled_to(config.render_width, config.render_height);
    let ln = norm3(light_dir);
    let light = light_dir.map(|c| c / ln);
    let cam: Vec<[f64; 3]> = mesh.vertices.iter().map(|&v| pose.transform(v)).collect();

    let mut inv_depth = vec![0.0f64; rw * rh];
    let mut shade = vec![0.0f32; rw * rh];
    let mut covered = vec![false; rw * rh];
    let ambient = config.ambient as f64;

    for tri in &mesh.triangles {
        let p = tri.map(|i| cam[i]);
        if p.iter().any(|v| v[2] <= NEAR_PLANE) {
            continue;
        }
        let mut n = cross3(
            [p[1][0] - p[0][0], p[1][1] - p[0][1], p[1][2] - p[0][2]],
            [p[2][0] - p[0][0], p[2][1] - p[0][1], p[2][2] - p[0][2]],
        );
        let nn = norm3(n);
        if nn == 0.0 {
            continue;
        }
        n = n.map(|c| c / nn);
        // Shade the side facing the camera.
        if dot3(n, p[0]) > 0.0 {
            n = n.map(|c| -c);
        }
        let intensity = (ambient + (1.0 - ambient) * dot3(n, light).max(0.0)) as f32;

        let s = p.map(|v| [kr.fx * v[0] / v[2] + kr.cx, kr.fy * v[1] / v[2] + kr.cy]);
        let inv_z = p.map(|v| 1.0 / v[2]);
        let area = edge(s[0], s[1], s[2]);
        if area.abs() < 1e-12 {
            continue;
        }
        let orient = area.signum();
        let xmin = s.iter().map(|q| q[0]).fold(f64::INFINITY, f64::min).floor().max(0.0);
        let xmax = s.iter().map(|q| q[0]).fold(f64::NEG_INFINITY, f64::max).ceil().min(rw as f64 - 1.0);
        let ymin = s.iter().map(|q| q[1]).fold(f64::INFINITY, f64::min).floor().max(0.0);
        let ymax = s.iter().map(|q| q[1]).fold(f64::NEG_INFINITY, f64::max).ceil().min(rh as f64 - 1.0);
        if xmin > xmax || ymin > ymax {
            continue;
        }
        for y in ymin as usize..=ymax as usize {
            let py = y as f64 + 0.5;
            for x in xmin as usize..=xmax as usize {
                let q = [x as f64 + 0.5, py];
                let w0 = edge(s[1], s[2], q) * orient;
                let w1 = edge(s[2], s[0], q) * orient;
                let w2 = edge(s[0], s[1], q) * orient;
                if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                    continue;
                }
                let iz = (w0 * inv_z[0] + w1 * inv_z[1] + w2 * inv_z[2]) / area.abs();
                let idx = y * rw + x;
                if iz > inv_depth[idx] {
                    inv_depth[idx] = iz;
                    shade[idx] = intensity;
                    covered[idx] = true;
                }
            }
        }
    }
    if !covered.iter().any(|&c| c) {
        return Err(SceneError::ObjectOutOfFrame);
    }

    if config.star_probability > 0.0 {
        let gap = Geometric::new(config.star_probability)
            .map_err(|e| SceneError::InvalidConfig(format!("star probability: {e}")))?;
        let mut idx = 0u64;
        loop {
            idx += gap.sample(star_rng);
            if idx >= shade.len() as u64 {
                break;
            }
            if !covered[idx as usize] {
                shade[idx as usize] = 1.0;
            }
            idx += 1;
        }
    }

    let (ow, oh) = (k.width as usize, k.height as usize);
    let gray = area_downsample(&shade, rw, rh, ow, oh);
    let coverage: Vec<f32> = covered.iter().map(|&c| if c { 1.0 } else { 0.0 }).collect();
    let coverage = area_downsample(&coverage, rw, rh, ow, oh);
    Ok(Rendered {
        image: Image::from_gray(ow, oh, config.channels, &gray),
        mask: Mask {
            width: ow,
            height: oh,
            data: coverage.iter().map(|&c| c > 0.0).collect(),
        },
    })
}
