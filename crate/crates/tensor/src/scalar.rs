use std::fmt::Debug;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Storage scalar for tensors: `f32` for training, `f64` for gradient checks.
///
/// Reductions (dot products, convolution sums) accumulate in `f64` regardless
/// of the storage type.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Send + Sync + 'static
{
    fn to_acc(self) -> f64;
    fn from_acc(v: f64) -> Self;
}

impl Scalar for f32 {
    #[inline(always)]
    fn to_acc(self) -> f64 {
        self as f64
    }

    #[inline(always)]
    fn from_acc(v: f64) -> Self {
        v as f32
    }
}

impl Scalar for f64 {
    #[inline(always)]
    fn to_acc(self) -> f64 {
        self
    }

    #[inline(always)]
    fn from_acc(v: f64) -> Self {
        v
    }
}
