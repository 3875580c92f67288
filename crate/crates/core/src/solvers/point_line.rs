use nalgebra::{Matrix3, Vector3};

use super::rotation::rotations_from_constraints;
use super::{dedup_poses, nearly_parallel, root_tol, sin_parallel, LineCorr, PointCorr, PoseCandidate};
use crate::error::{Error, Result};
use crate::geom::so3::orthonormalize;
use crate::scalar::Real;

/// `g` such that `lambda_1 = g^T (R (X_k - X_1))` for bearings `f1`, `fk`.
fn depth_functional<T: Real>(f1: &Vector3<T>, fk: &Vector3<T>) -> Vector3<T> {
    let c = fk.cross(f1);
    fk.cross(&c) / c.norm_squared()
}

fn point_ok<T: Real>(pose: &PoseCandidate<T>, c: &PointCorr<T>) -> bool {
    let x = pose.transform(&c.point);
    let scale = T::one() + c.point.norm() + pose.translation.norm();
    x.dot(&c.bearing) > T::zero() && x.cross(&c.bearing).norm() <= root_tol::<T>() * scale
}

fn line_ok<T: Real>(pose: &PoseCandidate<T>, c: &LineCorr<T>) -> bool {
    let scale = T::one() + c.point.norm() + pose.translation.norm();
    c.line.dot(&(pose.rotation * c.direction)).abs() <= root_tol::<T>()
        && c.line.dot(&pose.transform(&c.point)).abs() <= root_tol::<T>() * scale
}

fn finish<T: Real>(poses: Vec<PoseCandidate<T>>) -> Result<Vec<PoseCandidate<T>>> {
    let poses = dedup_poses(poses);
    if poses.is_empty() {
        Err(Error::NoSolution)
    } else {
        Ok(poses)
    }
}

fn check_bearings<T: Real>(f: &[Vector3<T>]) -> Result<()> {
    for i in 0..f.len() {
        for j in i + 1..f.len() {
            if nearly_parallel(&f[i], &f[j]) {
                return Err(Error::DegenerateSample);
            }
        }
    }
    Ok(())
}

/// Perspective-three-point. Up to four poses with positive depths.
pub fn solve_p3p<T: Real>(corrs: &[PointCorr<T>; 3]) -> Result<Vec<PoseCandidate<T>>> {
    let [c1, c2, c3] = corrs;
    let d12 = c2.point - c1.point;
    let d13 = c3.point - c1.point;
    if d12.norm() == T::zero() || d13.norm() == T::zero() || nearly_parallel(&d12, &d13) {
        return Err(Error::DegenerateSample);
    }
    check_bearings(&[c1.bearing, c2.bearing, c3.bearing])?;
    let n12 = c1.bearing.cross(&c2.bearing);
    let n13 = c1.bearing.cross(&c3.bearing);
    let g12 = depth_functional(&c1.bearing, &c2.bearing);
    let g13 = depth_functional(&c1.bearing, &c3.bearing);
    let m2 = n13 * d13.transpose();
    let m3 = g12 * d12.transpose() - g13 * d13.transpose();
    let mut out = Vec::new();
    for r in rotations_from_constraints(&n12, &d12, &m2, &m3) {
        let r = orthonormalize(&r);
        let lambda = g12.dot(&(r * d12));
        let pose = PoseCandidate::new(r, c1.bearing * lambda - r * c1.point);
        if corrs.iter().all(|c| point_ok(&pose, c)) {
            out.push(pose);
        }
    }
    finish(out)
}

/// Two points and one line.
pub fn solve_p2p1ll<T: Real>(
    points: &[PointCorr<T>; 2],
    line: &LineCorr<T>,
) -> Result<Vec<PoseCandidate<T>>> {
    let [c1, c2] = points;
    let d12 = c2.point - c1.point;
    if d12.norm() == T::zero() || nearly_parallel(&c1.bearing, &c2.bearing) {
        return Err(Error::DegenerateSample);
    }
    let n12 = c1.bearing.cross(&c2.bearing);
    let g12 = depth_functional(&c1.bearing, &c2.bearing);
    let m2 = n12 * d12.transpose();
    let m3 = line.line * (line.point - c1.point).transpose()
        + g12 * d12.transpose() * line.line.dot(&c1.bearing);
    if m3.norm() == T::zero() {
        return Err(Error::DegenerateSample);
    }
    let mut out = Vec::new();
    for r in rotations_from_constraints(&line.line, &line.direction, &m2, &m3) {
        let r = orthonormalize(&r);
        let lambda = g12.dot(&(r * d12));
        let pose = PoseCandidate::new(r, c1.bearing * lambda - r * c1.point);
        if points.iter().all(|c| point_ok(&pose, c)) && line_ok(&pose, line) {
            out.push(pose);
        }
    }
    finish(out)
}

/// One point and two lines.
pub fn solve_p1p2ll<T: Real>(
    point: &PointCorr<T>,
    lines: &[LineCorr<T>; 2],
) -> Result<Vec<PoseCandidate<T>>> {
    let [la, lb] = lines;
    if nearly_parallel(&la.line, &lb.line) {
        return Err(Error::DegenerateSample);
    }
    let f = point.bearing;
    let (pa, pb) = (la.line.dot(&f), lb.line.dot(&f));
    // The point's bearing must leave at least one interpretation plane so
    // that its depth is observable.
    if pa.abs().max(pb.abs()) < sin_parallel::<T>() {
        return Err(Error::DegenerateSample);
    }
    let da = la.point - point.point;
    let db = lb.point - point.point;
    let m2 = lb.line * lb.direction.transpose();
    let m3 = la.line * da.transpose() * pb - lb.line * db.transpose() * pa;
    if m3.norm() == T::zero() {
        return Err(Error::DegenerateSample);
    }
    let mut out = Vec::new();
    for r in rotations_from_constraints(&la.line, &la.direction, &m2, &m3) {
        let r = orthonormalize(&r);
        let lambda = if pa.abs() >= pb.abs() {
            -la.line.dot(&(r * da)) / pa
        } else {
            -lb.line.dot(&(r * db)) / pb
        };
        let pose = PoseCandidate::new(r, f * lambda - r * point.point);
        if point_ok(&pose, point) && lines.iter().all(|l| line_ok(&pose, l)) {
            out.push(pose);
        }
    }
    finish(out)
}

/// Three lines.
pub fn solve_p3ll<T: Real>(lines: &[LineCorr<T>; 3]) -> Result<Vec<PoseCandidate<T>>> {
    let [l1, l2, l3] = lines;
    let dirs_parallel = nearly_parallel(&l1.direction, &l2.direction)
        && nearly_parallel(&l1.direction, &l3.direction)
        && nearly_parallel(&l2.direction, &l3.direction);
    let normals = Matrix3::from_rows(&[l1.line.transpose(), l2.line.transpose(), l3.line.transpose()]);
    // Interpretation planes sharing a common line make t unobservable.
    if dirs_parallel || normals.determinant().abs() < sin_parallel::<T>() {
        return Err(Error::DegenerateSample);
    }
    let m2 = l2.line * l2.direction.transpose();
    let m3 = l3.line * l3.direction.transpose();
    let inv = normals.try_inverse().ok_or(Error::DegenerateSample)?;
    let mut out = Vec::new();
    for r in rotations_from_constraints(&l1.line, &l1.direction, &m2, &m3) {
        let r = orthonormalize(&r);
        let rhs = Vector3::new(
            -l1.line.dot(&(r * l1.point)),
            -l2.line.dot(&(r * l2.point)),
            -l3.line.dot(&(r * l3.point)),
        );
        let pose = PoseCandidate::new(r, inv * rhs);
        if lines.iter().all(|l| line_ok(&pose, l)) {
            out.push(pose);
        }
    }
    finish(out)
}
