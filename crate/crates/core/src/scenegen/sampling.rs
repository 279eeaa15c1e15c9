use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::SceneError;
use crate::camera::CameraIntrinsics;
use crate::geometry::{Pose, Quaternion, Translation};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseSampling {
    /// Range of `‖t‖` in metres.
    pub distance_range: [f64; 2],
    /// The object centre projects at least this fraction of the frame size
    /// away from every image border.
    pub centre_margin: f64,
}

impl Default for PoseSampling {
    fn default() -> Self {
        Self {
            distance_range: [0.3, 1.0],
            centre_margin: 0.15,
        }
    }
}

impl PoseSampling {
    pub fn validate(&self) -> Result<(), SceneError> {
        let [lo, hi] = self.distance_range;
        if !(lo > 0.0 && hi > lo && (0.0..0.5).contains(&self.centre_margin)) {
            return Err(SceneError::InvalidConfig(format!("pose sampling {self:?}")));
        }
        Ok(())
    }
}

/// Rotation uniform on SO(3): a normalized 4-D standard Gaussian.
pub fn sample_rotation<R: Rng + ?Sized>(rng: &mut R) -> Quaternion<f64> {
    loop {
        let q = Quaternion::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        if let Ok(u) = q.normalize() {
            if q.norm() > 1e-6 {
                return u;
            }
        }
    }
}

/// Distance uniform over the configured range along a ray through a pixel
/// drawn uniformly from the margin-inset frame; rotation uniform on SO(3).
pub fn sample_pose<R: Rng + ?Sized>(rng: &mut R, config: &PoseSampling, k: &CameraIntrinsics<f64>) -> Pose<f64> {
    let [lo, hi] = config.distance_range;
    let distance = rng.random_range(lo..hi);
    let (w, h) = (k.width as f64, k.height as f64);
    let m = config.centre_margin;
    let u = rng.random_range(m * w..(1.0 - m) * w);
    let v = rng.random_range(m * h..(1.0 - m) * h);
    let ray = k.ray(u, v);
    let translation = Translation::new(ray[0] * distance, ray[1] * distance, ray[2] * distance);
    Pose::new(translation, sample_rotation(rng))
}
