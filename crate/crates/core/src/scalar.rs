//! Scalar abstraction shared by the geometry, dynamics and reward code.

use std::fmt::{Debug, Display};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating point scalar usable by the planar geometry and dynamics code: `f32` or `f64`.
pub trait Real:
    Float + FloatConst + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal. Panics only if the value is not representable at all,
    /// which cannot happen for `f32`/`f64`.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar convertible to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Wraps an angle to `[-π, π)`.
pub fn wrap_angle<T: Real>(a: T) -> T {
    let two_pi = T::TAU();
    let mut w = a - two_pi * ((a + T::PI()) / two_pi).floor();
    if w >= T::PI() {
        w = w - two_pi;
    }
    if w < -T::PI() {
        w = w + two_pi;
    }
    w
}

/// Wraps an angle to `[0, 2π)`.
pub fn wrap_positive<T: Real>(a: T) -> T {
    let two_pi = T::TAU();
    let mut w = a - two_pi * (a / two_pi).floor();
    if w >= two_pi {
        w = w - two_pi;
    }
    if w < T::zero() {
        w = T::zero();
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn wrap_angle_range() {
        for k in -50..50 {
            let a = k as f64 * 0.37;
            let w = wrap_angle(a);
            assert!((-PI..PI).contains(&w), "{a} -> {w}");
            assert!(((a - w) / (2.0 * PI)).round() * 2.0 * PI - (a - w) < 1e-9);
        }
        assert_eq!(wrap_angle(PI), -PI);
        assert_eq!(wrap_angle(-PI), -PI);
        let w32 = wrap_angle(7.0f32);
        assert!((w32 - (7.0 - 2.0 * std::f32::consts::PI)).abs() < 1e-6);
    }

    #[test]
    fn wrap_positive_range() {
        for k in -50..50 {
            let w = wrap_positive(k as f64 * 0.91);
            assert!((0.0..2.0 * PI).contains(&w));
        }
    }
}
