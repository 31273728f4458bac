use std::fmt::Debug;

use num_traits::{Float, FloatConst, FromPrimitive};

/// Real scalar used by the geometry, schedule, energy and metric code.
///
/// Implemented for `f32` and `f64`. The learning stack (tape, denoiser,
/// diffusion, alignment) is fixed to `f64` because its gradient checks need
/// the extra precision.
pub trait Real: Float + FloatConst + FromPrimitive + Debug + Default + Send + Sync + 'static {
    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable")
    }
}

impl Real for f32 {}
impl Real for f64 {}

pub type Vec3<F = f64> = [F; 3];

#[inline]
pub fn add3<F: Real>(a: Vec3<F>, b: Vec3<F>) -> Vec3<F> {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub3<F: Real>(a: Vec3<F>, b: Vec3<F>) -> Vec3<F> {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn scale3<F: Real>(a: Vec3<F>, c: F) -> Vec3<F> {
    [a[0] * c, a[1] * c, a[2] * c]
}

#[inline]
pub fn dot3<F: Real>(a: Vec3<F>, b: Vec3<F>) -> F {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross3<F: Real>(a: Vec3<F>, b: Vec3<F>) -> Vec3<F> {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm3<F: Real>(a: Vec3<F>) -> F {
    dot3(a, a).sqrt()
}

#[inline]
pub fn dist3<F: Real>(a: Vec3<F>, b: Vec3<F>) -> F {
    norm3(sub3(a, b))
}

pub fn normalize3<F: Real>(a: Vec3<F>) -> Vec3<F> {
    let n = norm3(a);
    if n > F::zero() {
        scale3(a, F::one() / n)
    } else {
        a
    }
}
