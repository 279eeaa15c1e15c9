//! Monocular relative pose estimation of an asymmetric truss: synthetic
//! dataset generation with reprojection validation, plain / branched /
//! parallel VGG-style regressors at toy scale, quaternion pose losses,
//! training, and evaluation metrics.
//!
//! Geometry and projection are generic over [`Real`]; the concrete aliases
//! below cover the common cases. Networks store `f32` and are checked in `f64`.

pub mod camera;
pub mod evaluation;
pub mod geometry;
pub mod imaging;
pub mod models;
pub mod scenegen;
pub mod training;

use std::fmt::Debug;

use num_traits::{Float, FloatConst, FromPrimitive};

pub use trusspose_tensor as tensor;

/// Scalar for geometric quantities.
pub trait Real: Float + FloatConst + FromPrimitive + Debug + Default + Send + Sync + 'static {}

impl Real for f32 {}
impl Real for f64 {}

pub type Quaternion64 = geometry::Quaternion<f64>;
pub type Quaternion32 = geometry::Quaternion<f32>;
pub type Translation64 = geometry::Translation<f64>;
pub type Translation32 = geometry::Translation<f32>;
pub type Pose64 = geometry::Pose<f64>;
pub type Pose32 = geometry::Pose<f32>;
pub type CameraIntrinsics64 = camera::CameraIntrinsics<f64>;
pub type PixelPoint64 = camera::PixelPoint<f64>;
pub type PoseOutput32 = models::PoseOutput<f32>;
pub type PoseModel32 = models::PoseModel<f32>;
