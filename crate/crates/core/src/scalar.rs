//! Scalar abstraction shared by every numeric module.

use nalgebra::{Matrix2, RealField, Vector2};
use num_traits::ToPrimitive;

/// Floating-point scalar usable throughout the estimator (`f32` or `f64`).
pub trait Real: RealField + Copy + ToPrimitive {}

impl<T: RealField + Copy + ToPrimitive> Real for T {}

/// Converts an `f64` literal into the working scalar.
#[inline]
pub fn lit<T: Real>(x: f64) -> T {
    nalgebra::convert(x)
}

/// Converts a scalar back to `f64` (for I/O and reporting).
#[inline]
pub fn to_f64<T: Real>(x: T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// `x > 0`, false for NaN.
#[inline]
pub fn positive<T: Real>(x: T) -> bool {
    x > T::zero()
}

/// Planar rotation by `angle` acting on (x, z) column vectors.
pub fn rot2<T: Real>(angle: T) -> Matrix2<T> {
    let (s, c) = angle.sin_cos();
    Matrix2::new(c, -s, s, c)
}

/// Planar cross product `w × r` for a scalar rate and an (x, z) vector.
#[inline]
pub fn cross2<T: Real>(w: T, r: &Vector2<T>) -> Vector2<T> {
    Vector2::new(-w * r.y, w * r.x)
}

/// Wraps an angle into (-π, π].
pub fn wrap_angle<T: Real>(a: T) -> T {
    let two_pi = T::two_pi();
    let mut w = a % two_pi;
    if w > T::pi() {
        w -= two_pi;
    } else if w <= -T::pi() {
        w += two_pi;
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_keeps_half_open_interval() {
        let pi = std::f64::consts::PI;
        assert_eq!(wrap_angle(pi), pi);
        assert!((wrap_angle(-pi) - pi).abs() < 1e-12);
        assert!((wrap_angle(3.0 * pi + 0.1) - (-pi + 0.1)).abs() < 1e-12);
        assert!((wrap_angle(0.3_f32) - 0.3).abs() < 1e-7);
    }

    #[test]
    fn rotation_matches_cross_derivative() {
        let a = 0.37_f64;
        let r = Vector2::new(0.2, -0.4);
        let eps = 1e-7;
        let fd = (rot2(a + eps) * r - rot2(a - eps) * r) / (2.0 * eps);
        let an = rot2(a) * cross2(1.0, &r);
        assert!((fd - an).norm() < 1e-8);
    }
}
