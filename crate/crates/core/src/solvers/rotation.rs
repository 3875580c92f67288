//! Rotations satisfying three linear constraints `tr(M_i^T R) = 0` where the
//! first constraint is rank one, `n^T R v = 0`.
//!
//! Every such rotation factors as `R = Rot(n, a) Rot(w, b) R0` with `w _|_ n`
//! and `R0 v = w`: `Rot(w, b) R0 v = w` and `Rot(n, a)` keeps `R v`
//! orthogonal to `n`. Each factor is affine in `(cos, sin)` of its angle, so
//! the two remaining constraints read `E_i(a) + F_i(a) cos b + G_i(a) sin b
//! = 0`. Solving that pair for `(cos b, sin b)` and imposing `cos^2 + sin^2
//! = 1` gives a degree-8 polynomial in `u = tan(a / 2)`.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};

use crate::geom::line::orthogonal_unit;
use crate::geom::so3::{rotation_between, skew};
use crate::poly::Poly;
use crate::scalar::Real;

/// `Rot(n, a) = A[0] + cos(a) A[1] + sin(a) A[2]`.
fn affine_rotation<T: Real>(n: &Vector3<T>) -> [Matrix3<T>; 3] {
    let nn = n * n.transpose();
    [nn, Matrix3::identity() - nn, skew(n)]
}

fn trig<T: Real>(a: T) -> [T; 3] {
    [T::one(), a.cos(), a.sin()]
}

fn dtrig<T: Real>(a: T) -> [T; 3] {
    [T::zero(), -a.sin(), a.cos()]
}

struct Coefficients<T: Real> {
    c: [[[T; 3]; 3]; 2],
    a: [Matrix3<T>; 3],
    b: [Matrix3<T>; 3],
    base: Matrix3<T>,
}

impl<T: Real> Coefficients<T> {
    fn value(&self, i: usize, fa: &[T; 3], fb: &[T; 3]) -> T {
        let mut s = T::zero();
        for p in 0..3 {
            for q in 0..3 {
                s += self.c[i][p][q] * fa[p] * fb[q];
            }
        }
        s
    }

    fn residual(&self, a: T, b: T) -> Vector2<T> {
        let (fa, fb) = (trig(a), trig(b));
        Vector2::new(self.value(0, &fa, &fb), self.value(1, &fa, &fb))
    }

    fn jacobian(&self, a: T, b: T) -> Matrix2<T> {
        let (fa, fb, da, db) = (trig(a), trig(b), dtrig(a), dtrig(b));
        Matrix2::new(
            self.value(0, &da, &fb),
            self.value(0, &fa, &db),
            self.value(1, &da, &fb),
            self.value(1, &fa, &db),
        )
    }

    /// `(E, F, G)` of constraint `i` at a fixed first angle.
    fn efg(&self, i: usize, fa: &[T; 3]) -> [T; 3] {
        let mut out = [T::zero(); 3];
        for (q, o) in out.iter_mut().enumerate() {
            for p in 0..3 {
                *o += self.c[i][p][q] * fa[p];
            }
        }
        out
    }

    fn rotation(&self, a: T, b: T) -> Matrix3<T> {
        let (fa, fb) = (trig(a), trig(b));
        let ra = self.a[0] + self.a[1] * fa[1] + self.a[2] * fa[2];
        let rb = self.b[0] + self.b[1] * fb[1] + self.b[2] * fb[2];
        ra * rb * self.base
    }
}

/// `(cos b, sin b)` from the two remaining constraints, or `None` when they
/// do not determine `b`.
fn solve_second_angle<T: Real>(e2: &[T; 3], e3: &[T; 3]) -> Option<T> {
    let det = e2[1] * e3[2] - e3[1] * e2[2];
    let scale = (e2[1].abs() + e2[2].abs()) * (e3[1].abs() + e3[2].abs());
    if det.abs() <= T::lit(1e-12) * scale || scale == T::zero() {
        return None;
    }
    let cb = (e3[0] * e2[2] - e2[0] * e3[2]) / det;
    let sb = (e2[0] * e3[1] - e3[0] * e2[1]) / det;
    Some(sb.atan2(cb))
}

/// All rotations with `n^T R v = 0`, `tr(m2^T R) = 0`, `tr(m3^T R) = 0`.
pub(crate) fn rotations_from_constraints<T: Real>(
    n: &Vector3<T>,
    v: &Vector3<T>,
    m2: &Matrix3<T>,
    m3: &Matrix3<T>,
) -> Vec<Matrix3<T>> {
    let n = n.normalize();
    let w = orthogonal_unit(&n);
    let base = rotation_between(&v.normalize(), &w);
    let a = affine_rotation(&n);
    let b = affine_rotation(&w);
    let m = [m2 / m2.norm(), m3 / m3.norm()];
    let mut c = [[[T::zero(); 3]; 3]; 2];
    for (i, mi) in m.iter().enumerate() {
        for p in 0..3 {
            for q in 0..3 {
                c[i][p][q] = (mi.transpose() * a[p] * b[q] * base).trace();
            }
        }
    }
    let coef = Coefficients { c, a, b, base };

    // cos, sin and 1 of the first angle, scaled by (1 + u^2).
    let phi = [
        Poly::new(vec![T::one(), T::zero(), T::one()]),
        Poly::new(vec![T::one(), T::zero(), -T::one()]),
        Poly::new(vec![T::zero(), T::lit(2.0), T::zero()]),
    ];
    let efg_poly = |i: usize| -> [Poly<T>; 3] {
        let mut out = [
            Poly::constant(T::zero()),
            Poly::constant(T::zero()),
            Poly::constant(T::zero()),
        ];
        for (q, o) in out.iter_mut().enumerate() {
            for (p, ph) in phi.iter().enumerate() {
                *o = o.add(&ph.scale(coef.c[i][p][q]));
            }
        }
        out
    };
    let [e2, f2, g2] = efg_poly(0);
    let [e3, f3, g3] = efg_poly(1);
    let det = f2.mul(&g3).sub(&f3.mul(&g2));
    let cnum = e3.mul(&g2).sub(&e2.mul(&g3));
    let snum = e2.mul(&f3).sub(&e3.mul(&f2));
    let p = cnum.mul(&cnum).add(&snum.mul(&snum)).sub(&det.mul(&det));

    let mut firsts: Vec<T> = p
        .real_roots()
        .into_iter()
        .map(|u| T::lit(2.0) * u.atan())
        .collect();
    // u = tan(a/2) cannot represent a = pi; it shows up as a vanishing
    // leading coefficient.
    let lead = p.coeffs.last().copied().unwrap_or_else(T::zero);
    if lead.abs() <= T::lit(1e-8) * p.magnitude() {
        firsts.push(T::pi());
    }

    let mut out: Vec<Matrix3<T>> = Vec::new();
    for a0 in firsts {
        let fa = trig(a0);
        let Some(b0) = solve_second_angle(&coef.efg(0, &fa), &coef.efg(1, &fa)) else {
            continue;
        };
        let (mut ta, mut tb) = (a0, b0);
        for _ in 0..6 {
            let r = coef.residual(ta, tb);
            if r.norm() < T::default_epsilon() {
                break;
            }
            let Some(step) = coef.jacobian(ta, tb).try_inverse().map(|j| j * r) else {
                break;
            };
            let (na, nb) = (ta - step.x, tb - step.y);
            if coef.residual(na, nb).norm() >= r.norm() {
                break;
            }
            ta = na;
            tb = nb;
        }
        let r = coef.rotation(ta, tb);
        if out.iter().all(|q| (q - r).norm() > T::lit(1e-9)) {
            out.push(r);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::so3;

    #[test]
    fn recovers_random_rotation() {
        let r = so3::exp(&Vector3::new(0.3, -1.2, 0.7));
        let v = Vector3::new(0.2, 0.5, -0.8).normalize();
        let n = (r * v).cross(&Vector3::new(1.0, 0.3, 0.1)).normalize();
        let mk = |a: Vector3<f64>, b: Vector3<f64>| {
            let rb = r * b;
            let a = a - rb * (a.dot(&rb) / rb.norm_squared());
            a * b.transpose()
        };
        let m2 = mk(Vector3::new(0.1, 1.0, 0.4), Vector3::new(1.0, -0.2, 0.3));
        let m3 = mk(Vector3::new(-0.6, 0.2, 1.0), Vector3::new(0.4, 0.9, 0.1));
        let sols = rotations_from_constraints(&n, &v, &m2, &m3);
        assert!(sols.len() <= 8);
        assert!(sols.iter().any(|s| so3::angle_between(s, &r) < 1e-10));
        for s in &sols {
            assert!(n.dot(&(s * v)).abs() < 1e-10);
            assert!((m2.transpose() * s).trace().abs() < 1e-10);
            assert!((m3.transpose() * s).trace().abs() < 1e-10);
        }
    }

    #[test]
    fn half_turn_about_constraint_axis() {
        // Ground truth is exactly a = pi in the factorization.
        let n = Vector3::z();
        let v = Vector3::new(0.3, 0.2, 0.1).normalize();
        let w = orthogonal_unit(&n);
        let base = rotation_between(&v, &w);
        let r = so3::axis_angle(&n, std::f64::consts::PI) * so3::axis_angle(&w, 0.4) * base;
        let m2 = Vector3::new(0.0, 1.0, 0.0).cross(&(r * Vector3::x())) * Vector3::x().transpose();
        let m3 = Vector3::new(1.0, 0.0, 0.5).cross(&(r * Vector3::y())) * Vector3::y().transpose();
        let sols = rotations_from_constraints(&n, &v, &m2, &m3);
        assert!(sols.iter().any(|s| so3::angle_between(s, &r) < 1e-9));
    }
}
