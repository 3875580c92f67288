//! Rotation group helpers on axis-angle vectors.
//!
//! The left Jacobian and its derivative follow the axis-angle chart used by
//! the orthonormal line parameterization: `exp((theta + dtheta)^) ~=
//! exp((J_L dtheta)^) exp(theta^)`.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Threshold on `|theta|` below which exp/log/J_L use Taylor expansions.
pub const SMALL_ANGLE: f64 = 1e-4;

/// Threshold for the cancellation-prone coefficients (`f_h` and the
/// derivatives of `f_g`, `f_h`). Their closed forms lose roughly
/// `eps / |theta|^4` relative precision, so a wider Taylor region is needed.
pub const SMALL_ANGLE_DERIVATIVE: f64 = 2e-2;

#[inline]
pub fn skew<T: Real>(v: &Vector3<T>) -> Matrix3<T> {
    Matrix3::new(
        T::zero(),
        -v.z,
        v.y,
        v.z,
        T::zero(),
        -v.x,
        -v.y,
        v.x,
        T::zero(),
    )
}

#[inline]
pub fn vee<T: Real>(m: &Matrix3<T>) -> Vector3<T> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// `d(theta^)/d(theta_i)`, the three so(3) generators.
pub fn generators<T: Real>() -> [Matrix3<T>; 3] {
    [
        skew(&Vector3::x()),
        skew(&Vector3::y()),
        skew(&Vector3::z()),
    ]
}

/// Rodrigues exponential map.
pub fn exp<T: Real>(theta: &Vector3<T>) -> Matrix3<T> {
    let a2 = theta.norm_squared();
    let a = a2.sqrt();
    let k = skew(theta);
    let (s, c) = if a < T::lit(SMALL_ANGLE) {
        (
            T::one() - a2 / T::lit(6.0) + a2 * a2 / T::lit(120.0),
            T::lit(0.5) - a2 / T::lit(24.0) + a2 * a2 / T::lit(720.0),
        )
    } else {
        (a.sin() / a, (T::one() - a.cos()) / a2)
    };
    Matrix3::identity() + k * s + k * k * c
}

/// Logarithm map. Fails within `1e-9` of a half-turn, where the axis is not
/// recoverable from the antisymmetric part.
pub fn log<T: Real>(u: &Matrix3<T>) -> Result<Vector3<T>> {
    let tr = u.trace();
    if tr < -T::one() + T::lit(1e-9) {
        return Err(Error::LogDomain);
    }
    let cos_a = ((tr - T::one()) * T::lit(0.5)).clamp(-T::one(), T::one());
    let a = cos_a.acos();
    let factor = if a < T::lit(SMALL_ANGLE) {
        let a2 = a * a;
        T::lit(0.5) + a2 / T::lit(12.0) + T::lit(7.0) * a2 * a2 / T::lit(720.0)
    } else {
        a / (T::lit(2.0) * a.sin())
    };
    Ok(vee(&(u - u.transpose())) * factor)
}

/// Coefficients `(f_g, f_h)` with `J_L = I + f_g theta^ + f_h theta^2`.
pub fn left_jacobian_coefficients<T: Real>(theta: &Vector3<T>) -> (T, T) {
    let a2 = theta.norm_squared();
    let a = a2.sqrt();
    let fg = if a < T::lit(SMALL_ANGLE) {
        T::lit(0.5) - a2 / T::lit(24.0) + a2 * a2 / T::lit(720.0)
    } else {
        (T::one() - a.cos()) / a2
    };
    let fh = if a < T::lit(SMALL_ANGLE_DERIVATIVE) {
        T::one() / T::lit(6.0) - a2 / T::lit(120.0) + a2 * a2 / T::lit(5040.0)
    } else {
        (a - a.sin()) / (a2 * a)
    };
    (fg, fh)
}

pub fn left_jacobian<T: Real>(theta: &Vector3<T>) -> Matrix3<T> {
    let (fg, fh) = left_jacobian_coefficients(theta);
    let k = skew(theta);
    Matrix3::identity() + k * fg + k * k * fh
}

/// Gradients of `f_g` and `f_h` with respect to `theta` (each a scalar
/// multiple of `theta`).
pub fn left_jacobian_coefficient_gradients<T: Real>(theta: &Vector3<T>) -> (Vector3<T>, Vector3<T>) {
    let a2 = theta.norm_squared();
    let a = a2.sqrt();
    let (sg, sh) = if a < T::lit(SMALL_ANGLE_DERIVATIVE) {
        (
            -T::one() / T::lit(12.0) + a2 / T::lit(180.0) - a2 * a2 / T::lit(6720.0),
            -T::one() / T::lit(60.0) + a2 / T::lit(1260.0) - a2 * a2 / T::lit(60480.0),
        )
    } else {
        let (s, c) = (a.sin(), a.cos());
        let a3 = a2 * a;
        let a4 = a2 * a2;
        (
            s / a3 + T::lit(2.0) * (c - T::one()) / a4,
            (T::one() - c) / a4 + T::lit(3.0) * (s - a) / (a4 * a),
        )
    };
    (theta * sg, theta * sh)
}

/// `d J_L / d theta_i` for `i = 0..3`.
pub fn left_jacobian_derivatives<T: Real>(theta: &Vector3<T>) -> [Matrix3<T>; 3] {
    let (fg, fh) = left_jacobian_coefficients(theta);
    let (dfg, dfh) = left_jacobian_coefficient_gradients(theta);
    let k = skew(theta);
    let k2 = k * k;
    let gens = generators::<T>();
    let mut out = [Matrix3::zeros(); 3];
    for i in 0..3 {
        let e = &gens[i];
        out[i] = k * dfg[i] + e * fg + k2 * dfh[i] + (e * k + k * e) * fh;
    }
    out
}

/// Project an approximately orthonormal matrix back onto SO(3).
pub fn orthonormalize<T: Real>(m: &Matrix3<T>) -> Matrix3<T> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let vt = svd.v_t.expect("svd v_t");
    let mut r = u * vt;
    if r.determinant() < T::zero() {
        let mut u2 = u;
        u2.column_mut(2).neg_mut();
        r = u2 * vt;
    }
    r
}

/// Geodesic angle between two rotations, in radians.
pub fn angle_between<T: Real>(a: &Matrix3<T>, b: &Matrix3<T>) -> T {
    let tr = (a.transpose() * b).trace();
    ((tr - T::one()) * T::lit(0.5))
        .clamp(-T::one(), T::one())
        .acos()
}

/// Rotation by `angle` about a unit `axis`.
pub fn axis_angle<T: Real>(axis: &Vector3<T>, angle: T) -> Matrix3<T> {
    exp(&(axis.normalize() * angle))
}

/// Minimal rotation taking unit `a` onto unit `b`. When `a ~= -b` the
/// half-turn about the axis returned by [`crate::geom::orthogonal_unit`] is
/// used.
pub fn rotation_between<T: Real>(a: &Vector3<T>, b: &Vector3<T>) -> Matrix3<T> {
    let a = a.normalize();
    let b = b.normalize();
    let c = a.dot(&b).clamp(-T::one(), T::one());
    let axis = a.cross(&b);
    let s = axis.norm();
    if s < T::lit(1e-12) {
        if c > T::zero() {
            return Matrix3::identity();
        }
        let k = crate::geom::line::orthogonal_unit(&a);
        // Half-turn about k: 2 k k^T - I.
        return k * k.transpose() * T::lit(2.0) - Matrix3::identity();
    }
    axis_angle(&(axis / s), s.atan2(c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn exp_of_zero_is_identity() {
        assert_eq!(exp(&Vector3::<f64>::zeros()), Matrix3::identity());
        assert_eq!(left_jacobian(&Vector3::<f64>::zeros()), Matrix3::identity());
    }

    #[test]
    fn log_rejects_half_turn() {
        let r = axis_angle(&Vector3::new(0.0, 0.0, 1.0), std::f64::consts::PI);
        assert_eq!(log(&r), Err(Error::LogDomain));
    }

    #[test]
    fn small_angle_branches_are_continuous() {
        let axis = Vector3::new(0.3, -0.5, 0.8).normalize();
        for &a in &[0.99e-4, 1.01e-4, 1.99e-2, 2.01e-2] {
            let t: Vector3<f64> = axis * a;
            let r = exp(&t);
            assert_relative_eq!(log(&r).unwrap(), t, epsilon = 1e-15);
            let (fg, fh) = left_jacobian_coefficients(&t);
            assert_relative_eq!(fg, (1.0 - a.cos()) / (a * a), epsilon = 1e-8);
            assert_relative_eq!(fh, 1.0 / 6.0 - a * a / 120.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn f32_round_trip() {
        let t = Vector3::new(0.2f32, -0.1, 0.4);
        let back = log(&exp(&t)).unwrap();
        assert!((back - t).norm() < 1e-5);
    }
}
