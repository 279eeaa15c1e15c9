//! Quaternion and pose algebra, the rotational-difference angle, and the
//! translation / rotation / combined pose losses with their gradients.
//!
//! Quaternions are stored as `(k, vx, vy, vz)`: real part first.

use std::ops::{Mul, Neg, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Real;

/// Norm below which a quaternion cannot be normalized.
pub const DEGENERATE_NORM: f64 = 1e-12;

/// Gradient of `acos` is evaluated no closer than this to ±1.
pub const ACOS_GRAD_LIMIT: f64 = 1.0 - 1e-7;

pub const DEFAULT_BETA: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("quaternion norm {0:e} is too small to normalize")]
    DegenerateQuaternion(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quaternion<T> {
    pub k: T,
    pub v: [T; 3],
}

impl<T: Real> Quaternion<T> {
    pub fn new(k: T, vx: T, vy: T, vz: T) -> Self {
        Self { k, v: [vx, vy, vz] }
    }

    pub fn identity() -> Self {
        Self::new(T::one(), T::zero(), T::zero(), T::zero())
    }

    pub fn from_array(a: [T; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [T; 4] {
        [self.k, self.v[0], self.v[1], self.v[2]]
    }

    /// Rotation of `angle` radians about `axis` (need not be unit).
    pub fn from_axis_angle(axis: [T; 3], angle: T) -> Self {
        let n = norm3(axis);
        let two = T::one() + T::one();
        let (s, c) = (angle / two).sin_cos();
        Self::new(c, s * axis[0] / n, s * axis[1] / n, s * axis[2] / n)
    }

    pub fn norm(self) -> T {
        self.dot(self).sqrt()
    }

    /// Four-dimensional inner product.
    pub fn dot(self, o: Self) -> T {
        self.k * o.k + dot3(self.v, o.v)
    }

    pub fn conjugate(self) -> Self {
        Self::new(self.k, -self.v[0], -self.v[1], -self.v[2])
    }

    pub fn scale(self, c: T) -> Self {
        Self::new(self.k * c, self.v[0] * c, self.v[1] * c, self.v[2] * c)
    }

    pub fn normalize(self) -> Result<Self, GeometryError> {
        normalize(self)
    }

    pub fn is_unit(self, tol: T) -> bool {
        (self.dot(self) - T::one()).abs() <= tol
    }

    /// Row-major rotation matrix of a unit quaternion.
    pub fn to_rotation_matrix(self) -> [[T; 3]; 3] {
        let (w, [x, y, z]) = (self.k, self.v);
        let one = T::one();
        let two = one + one;
        [
            [one - two * (y * y + z * z), two * (x * y - w * z), two * (x * z + w * y)],
            [two * (x * y + w * z), one - two * (x * x + z * z), two * (y * z - w * x)],
            [two * (x * z - w * y), two * (y * z + w * x), one - two * (x * x + y * y)],
        ]
    }

    /// Rotates `p` by this unit quaternion.
    pub fn rotate(self, p: [T; 3]) -> [T; 3] {
        let m = self.to_rotation_matrix();
        [dot3(m[0], p), dot3(m[1], p), dot3(m[2], p)]
    }

    pub fn cast<U: Real>(self) -> Quaternion<U> {
        Quaternion::from_array(self.to_array().map(cast))
    }
}

impl<T: Real> Mul for Quaternion<T> {
    type Output = Self;

    fn mul(self, b: Self) -> Self {
        quat_multiply(self, b)
    }
}

impl<T: Real> Neg for Quaternion<T> {
    type Output = Self;

    fn neg(self) -> Self {
        self.scale(-T::one())
    }
}

/// Hamilton product. The real part is `k₁k₂ − v₁·v₂`.
pub fn quat_multiply<T: Real>(a: Quaternion<T>, b: Quaternion<T>) -> Quaternion<T> {
    let c = cross3(a.v, b.v);
    Quaternion {
        k: a.k * b.k - dot3(a.v, b.v),
        v: [
            a.k * b.v[0] + b.k * a.v[0] + c[0],
            a.k * b.v[1] + b.k * a.v[1] + c[1],
            a.k * b.v[2] + b.k * a.v[2] + c[2],
        ],
    }
}

pub fn normalize<T: Real>(q: Quaternion<T>) -> Result<Quaternion<T>, GeometryError> {
    let n = q.norm();
    if !(n.to_f64().unwrap_or(0.0) > DEGENERATE_NORM) {
        return Err(GeometryError::DegenerateQuaternion(n.to_f64().unwrap_or(f64::NAN)));
    }
    Ok(q.scale(T::one() / n))
}

/// Which product the difference angle takes the real part of.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AngleConvention {
    /// `Re(Q·q̄) = Q·q`, the geodesic convention: zero exactly when the two
    /// quaternions encode the same rotation.
    #[default]
    Conjugate,
    /// `Re(Q·q) = k₁k₂ − v₁·v₂` taken literally. Zero when `q` is the
    /// inverse rotation of `Q`.
    Product,
}

impl AngleConvention {
    /// The fixed unit vector `c` for which `k = c·q`.
    fn reference<T: Real>(self, label: Quaternion<T>) -> Quaternion<T> {
        match self {
            AngleConvention::Conjugate => label,
            AngleConvention::Product => label.conjugate(),
        }
    }

    /// The real part compared against 1 when measuring the difference angle.
    pub fn real_part<T: Real>(self, a: Quaternion<T>, b: Quaternion<T>) -> T {
        match self {
            AngleConvention::Conjugate => quat_multiply(a, b.conjugate()).k,
            AngleConvention::Product => quat_multiply(a, b).k,
        }
    }
}

fn clamp_unit<T: Real>(k: T) -> T {
    k.max(-T::one()).min(T::one())
}

/// Folded difference angle `min(θ₀, 2π − θ₀)` with `θ₀ = 2·acos(k)`, in `[0, π]`.
///
/// Evaluated as `2·atan2(‖v‖, |k|)` on the full product, which equals the
/// folded form for unit inputs and stays accurate near `|k| = 1`.
pub fn rotation_angle<T: Real>(label: Quaternion<T>, pred: Quaternion<T>, convention: AngleConvention) -> T {
    let p = match convention {
        AngleConvention::Conjugate => quat_multiply(label, pred.conjugate()),
        AngleConvention::Product => quat_multiply(label, pred),
    };
    let v = (p.v[0] * p.v[0] + p.v[1] * p.v[1] + p.v[2] * p.v[2]).sqrt();
    two::<T>() * v.atan2(p.k.abs())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Translation<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Real> Translation<T> {
    pub fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    pub fn from_array(a: [T; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [T; 3] {
        [self.x, self.y, self.z]
    }

    pub fn norm(self) -> T {
        norm3(self.to_array())
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn cast<U: Real>(self) -> Translation<U> {
        Translation::from_array(self.to_array().map(cast))
    }
}

impl<T: Real> Sub for Translation<T> {
    type Output = Self;

    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

/// Pose of an object in the camera frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose<T> {
    pub translation: Translation<T>,
    pub rotation: Quaternion<T>,
}

impl<T: Real> Pose<T> {
    pub fn new(translation: Translation<T>, rotation: Quaternion<T>) -> Self {
        Self { translation, rotation }
    }

    pub fn identity() -> Self {
        Self::new(Translation::zero(), Quaternion::identity())
    }

    /// The seven-number label `[tx, ty, tz, k, vx, vy, vz]`.
    pub fn to_label(self) -> [T; 7] {
        let t = self.translation.to_array();
        let q = self.rotation.to_array();
        [t[0], t[1], t[2], q[0], q[1], q[2], q[3]]
    }

    pub fn from_label(l: [T; 7]) -> Self {
        Self::new(
            Translation::new(l[0], l[1], l[2]),
            Quaternion::new(l[3], l[4], l[5], l[6]),
        )
    }

    /// `R·p + t`.
    pub fn transform(self, p: [T; 3]) -> [T; 3] {
        let r = self.rotation.rotate(p);
        [r[0] + self.translation.x, r[1] + self.translation.y, r[2] + self.translation.z]
    }

    pub fn distance(self) -> T {
        self.translation.norm()
    }

    pub fn cast<U: Real>(self) -> Pose<U> {
        Pose::new(self.translation.cast(), self.rotation.cast())
    }
}

/// Euclidean distance between label and predicted translations.
pub fn translation_loss<T: Real>(label: Translation<T>, pred: Translation<T>) -> T {
    (label - pred).norm()
}

/// Gradient of [`translation_loss`] with respect to `pred`; zero at the
/// non-differentiable point `pred = label`.
pub fn translation_loss_grad<T: Real>(label: Translation<T>, pred: Translation<T>) -> [T; 3] {
    let d = pred - label;
    let n = d.norm();
    if n == T::zero() {
        return [T::zero(); 3];
    }
    [d.x / n, d.y / n, d.z / n]
}

/// Rotational loss on a raw (unnormalized) prediction: the raw quaternion is
/// normalized, then the folded difference angle `min(2·acos(k), 2π − 2·acos(k))`
/// is taken. The result lies in `[0, π] ⊂ [0, 2π]` and is invariant to the
/// sign and positive scale of `pred_raw`.
pub fn rotation_loss<T: Real>(
    label: Quaternion<T>,
    pred_raw: Quaternion<T>,
    convention: AngleConvention,
) -> Result<T, GeometryError> {
    Ok(rotation_angle(label, normalize(pred_raw)?, convention))
}

/// [`rotation_loss`] and its gradient with respect to the raw prediction,
/// taken through the normalization map.
pub fn rotation_loss_grad<T: Real>(
    label: Quaternion<T>,
    pred_raw: Quaternion<T>,
    convention: AngleConvention,
) -> Result<(T, [T; 4]), GeometryError> {
    let n = pred_raw.norm();
    let unit = normalize(pred_raw)?;
    let c = convention.reference(label);
    let k = clamp_unit(c.dot(unit));
    // The fold makes the loss 2·acos(|k|).
    let loss = rotation_angle(label, unit, convention);
    let limit = cast::<T>(ACOS_GRAD_LIMIT);
    let ka = k.abs().min(limit);
    let sign = if k < T::zero() { -T::one() } else { T::one() };
    let dloss_dk = -two::<T>() * sign / (T::one() - ka * ka).sqrt();
    // dk/dq = (c − k·q̂) / ‖q‖
    let (ca, ua) = (c.to_array(), unit.to_array());
    let k_raw = c.dot(unit);
    let grad = [0, 1, 2, 3].map(|i| dloss_dk * (ca[i] - k_raw * ua[i]) / n);
    Ok((loss, grad))
}

/// `L_T + β·L_R`.
pub fn combined_loss<T: Real>(translation: T, rotation: T, beta: T) -> T {
    translation + beta * rotation
}

/// Loss weighting and the angle convention, shared by training and evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub beta: f64,
    #[serde(default)]
    pub convention: AngleConvention,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            beta: DEFAULT_BETA,
            convention: AngleConvention::default(),
        }
    }
}

pub(crate) fn two<T: Real>() -> T {
    T::one() + T::one()
}

pub(crate) fn cast<T: Real>(v: impl num_traits::ToPrimitive) -> T {
    T::from(v).expect("representable")
}

pub(crate) fn dot3<T: Real>(a: [T; 3], b: [T; 3]) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross3<T: Real>(a: [T; 3], b: [T; 3]) -> [T; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn norm3<T: Real>(a: [T; 3]) -> T {
    dot3(a, a).sqrt()
}
