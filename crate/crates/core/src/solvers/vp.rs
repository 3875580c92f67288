//! Solvers with one known direction correspondence `R v3d = v2d`.
//!
//! With `R_a v3d = y` and `R_b v2d = y`, every admissible rotation is
//! `R = R_b^T R_y(q) R_a` where `R_y(q)` rotates about `y` by `2 atan(q)` and
//! `(1 + q^2) R_y(q) = Q0 + q Q1 + q^2 Q2`. The half-turn `q = inf` is
//! checked separately.

use nalgebra::{Matrix3, Vector3};

use super::{dedup_poses, nearly_parallel, perp_basis, root_tol, LineCorr, PointCorr, PoseCandidate, VpCorr};
use crate::error::{Error, Result};
use crate::geom::so3::{axis_angle, orthonormalize};
use crate::poly::Poly;
use crate::scalar::Real;

/// Minimal rotation with `R v = (0, 1, 0)`. For `v ~= -y` the half-turn about
/// `x` is returned.
pub fn align_vp_to_axis<T: Real>(v3d: &Vector3<T>) -> Matrix3<T> {
    let v = v3d.normalize();
    let y = Vector3::y();
    let axis = v.cross(&y);
    let s = axis.norm();
    let c = v.dot(&y);
    if s < T::lit(1e-12) {
        if c > T::zero() {
            return Matrix3::identity();
        }
        return Matrix3::from_diagonal(&Vector3::new(T::one(), -T::one(), -T::one()));
    }
    axis_angle(&(axis / s), s.atan2(c))
}

fn q_basis<T: Real>() -> [Matrix3<T>; 3] {
    let (z, o, t) = (T::zero(), T::one(), T::lit(2.0));
    [
        Matrix3::identity(),
        Matrix3::new(z, z, t, z, z, z, -t, z, z),
        Matrix3::from_diagonal(&Vector3::new(-o, o, -o)),
    ]
}

fn rotation_y<T: Real>(q: Option<T>) -> Matrix3<T> {
    match q {
        Some(q) => {
            let [q0, q1, q2] = q_basis::<T>();
            (q0 + q1 * q + q2 * (q * q)) / (T::one() + q * q)
        }
        None => q_basis::<T>()[2],
    }
}

/// Real roots of a quadratic in `q`, plus `None` (q = inf) when the leading
/// coefficient vanishes.
fn quadratic_roots<T: Real>(coeffs: [T; 3]) -> Vec<Option<T>> {
    let p = Poly::new(coeffs.to_vec());
    let mut out: Vec<Option<T>> = p.real_roots().into_iter().map(Some).collect();
    let mag = p.magnitude();
    if mag > T::zero() && coeffs[2].abs() <= T::lit(1e-10) * mag {
        out.push(None);
    }
    out
}

struct Frames<T: Real> {
    ra: Matrix3<T>,
    rb: Matrix3<T>,
}

impl<T: Real> Frames<T> {
    fn new(vp: &VpCorr<T>) -> Self {
        Self {
            ra: align_vp_to_axis(&vp.v3d),
            rb: align_vp_to_axis(&vp.v2d),
        }
    }

    fn rotation(&self, q: Option<T>) -> Matrix3<T> {
        orthonormalize(&(self.rb.transpose() * rotation_y(q) * self.ra))
    }
}

fn point_ok<T: Real>(pose: &PoseCandidate<T>, c: &PointCorr<T>) -> bool {
    let x = pose.transform(&c.point);
    let scale = T::one() + c.point.norm() + pose.translation.norm();
    x.dot(&c.bearing) > T::zero() && x.cross(&c.bearing).norm() <= root_tol::<T>() * scale
}

/// One direction and two points.
pub fn solve_vp_2pt<T: Real>(
    vp: &VpCorr<T>,
    points: &[PointCorr<T>; 2],
) -> Result<Vec<PoseCandidate<T>>> {
    let [c1, c2] = points;
    let d = c2.point - c1.point;
    if d.norm() == T::zero()
        || nearly_parallel(&c1.bearing, &c2.bearing)
        || (nearly_parallel(&d, &vp.v3d) && nearly_parallel(&c1.bearing, &vp.v2d))
    {
        return Err(Error::DegenerateSample);
    }
    let fr = Frames::new(vp);
    let qb = q_basis::<T>();
    // Rows b^T (R_y X' + t') = 0 over a basis of each bearing's complement.
    let mut rows: Vec<(Vector3<T>, [T; 3])> = Vec::with_capacity(4);
    for c in points {
        let f = fr.rb * c.bearing;
        let x = fr.ra * c.point;
        let (b1, b2) = perp_basis(&f);
        for b in [b1, b2] {
            rows.push((b, [b.dot(&(qb[0] * x)), b.dot(&(qb[1] * x)), b.dot(&(qb[2] * x))]));
        }
    }
    // det [B | c(q)] by cofactor expansion along the last column.
    let mut coeffs = [T::zero(); 3];
    for k in 0..4 {
        let minor = Matrix3::from_rows(
            &rows
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != k)
                .map(|(_, r)| r.0.transpose())
                .collect::<Vec<_>>(),
        );
        let sign = if (k + 3) % 2 == 0 { T::one() } else { -T::one() };
        let cof = sign * minor.determinant();
        for (j, c) in coeffs.iter_mut().enumerate() {
            *c += cof * rows[k].1[j];
        }
    }
    let qs = quadratic_roots(coeffs);
    if qs.is_empty() {
        return Err(Error::NoRealRoot);
    }
    let mut out = Vec::new();
    for q in qs {
        let ry = rotation_y(q);
        let mut ata = Matrix3::<T>::zeros();
        let mut atb = Vector3::<T>::zeros();
        for c in points {
            let f = fr.rb * c.bearing;
            let x = ry * (fr.ra * c.point);
            let (b1, b2) = perp_basis(&f);
            for b in [b1, b2] {
                ata += b * b.transpose();
                atb -= b * b.dot(&x);
            }
        }
        let Some(tp) = ata.try_inverse().map(|m| m * atb) else {
            continue;
        };
        let r = fr.rotation(q);
        let pose = PoseCandidate::new(r, fr.rb.transpose() * tp);
        if points.iter().all(|c| point_ok(&pose, c)) {
            out.push(pose);
        }
    }
    let out = dedup_poses(out);
    if out.is_empty() {
        Err(Error::NoRealRoot)
    } else {
        Ok(out)
    }
}

/// One direction, one point and one line.
pub fn solve_vp_1pt_1line<T: Real>(
    vp: &VpCorr<T>,
    point: &PointCorr<T>,
    line: &LineCorr<T>,
) -> Result<Vec<PoseCandidate<T>>> {
    if nearly_parallel(&line.direction, &vp.v3d) {
        return Err(Error::DegenerateSample);
    }
    let fr = Frames::new(vp);
    let qb = q_basis::<T>();
    let lp = fr.rb * line.line;
    let vpr = fr.ra * line.direction;
    let coeffs = [
        lp.dot(&(qb[0] * vpr)),
        lp.dot(&(qb[1] * vpr)),
        lp.dot(&(qb[2] * vpr)),
    ];
    let qs = quadratic_roots(coeffs);
    if qs.is_empty() {
        return Err(Error::NoRealRoot);
    }
    let (b1, b2) = perp_basis(&point.bearing);
    let a = Matrix3::from_rows(&[b1.transpose(), b2.transpose(), line.line.transpose()]);
    let Some(inv) = a.try_inverse() else {
        return Err(Error::DegenerateSample);
    };
    if a.determinant().abs() < super::sin_parallel::<T>() {
        return Err(Error::DegenerateSample);
    }
    let mut out = Vec::new();
    for q in qs {
        let r = fr.rotation(q);
        let rx = r * point.point;
        let rhs = Vector3::new(-b1.dot(&rx), -b2.dot(&rx), -line.line.dot(&(r * line.point)));
        let pose = PoseCandidate::new(r, inv * rhs);
        if point_ok(&pose, point) {
            out.push(pose);
        }
    }
    let out = dedup_poses(out);
    if out.is_empty() {
        Err(Error::NoRealRoot)
    } else {
        Ok(out)
    }
}
