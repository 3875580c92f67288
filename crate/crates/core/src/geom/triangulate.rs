use nalgebra::{DMatrix, Matrix3, Vector2, Vector3, Vector4};

use super::camera::CameraView;
use super::line::{Line3, Segment2, Segment3};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Minimum angle between back-projected plane normals for two-view line
/// triangulation, degrees.
pub const MIN_PLANE_ANGLE_DEG: f64 = 1.0;

/// Point on `line` closest to the viewing ray through pixel `x`.
pub fn unproject_endpoint_to_line<T: Real>(
    line: &Line3<T>,
    view: &CameraView<T>,
    x: &Vector2<T>,
) -> Result<Vector3<T>> {
    let c = view.center();
    let r = view.ray_direction(x);
    let p0 = line.point();
    let d = line.d;
    let b = d.dot(&r);
    let denom = T::one() - b * b;
    if denom < T::lit(1e-18) {
        return Err(Error::DegenerateRay);
    }
    let w0 = p0 - c;
    let s = (b * r.dot(&w0) - d.dot(&w0)) / denom;
    Ok(p0 + d * s)
}

/// World plane `(n, offset)` with `n . X + offset = 0` back-projected from a
/// homogeneous pixel line.
pub fn backproject_line<T: Real>(view: &CameraView<T>, l: &Vector3<T>) -> (Vector3<T>, T) {
    let nc = view.intrinsics.matrix().transpose() * l;
    let nc = nc / nc.norm();
    let n = view.rotation.transpose() * nc;
    (n, nc.dot(&view.translation))
}

/// Intersects the two planes back-projected from `seg_a` and `seg_b`; the
/// endpoints are `seg_a`'s endpoints unprojected onto the result.
pub fn triangulate_line_two_view<T: Real>(
    seg_a: &Segment2<T>,
    view_a: &CameraView<T>,
    seg_b: &Segment2<T>,
    view_b: &CameraView<T>,
) -> Result<Segment3<T>> {
    let (n1, o1) = backproject_line(view_a, &seg_a.homogeneous());
    let (n2, o2) = backproject_line(view_b, &seg_b.homogeneous());
    let dir = n1.cross(&n2);
    let sin = dir.norm();
    if sin < T::lit(MIN_PLANE_ANGLE_DEG).radians().sin() {
        return Err(Error::DegenerateTriangulation);
    }
    let d = dir / sin;
    // Point on both planes closest to the origin.
    let a = Matrix3::from_rows(&[n1.transpose(), n2.transpose(), d.transpose()]);
    let rhs = Vector3::new(-o1, -o2, T::zero());
    let p = a
        .lu()
        .solve(&rhs)
        .ok_or(Error::DegenerateTriangulation)?;
    let line = Line3::from_point_direction(&p, &d)?;
    let s = unproject_endpoint_to_line(&line, view_a, &seg_a.start)
        .map_err(|_| Error::DegenerateTriangulation)?;
    let e = unproject_endpoint_to_line(&line, view_a, &seg_a.end)
        .map_err(|_| Error::DegenerateTriangulation)?;
    if view_a.depth(&s) <= T::zero()
        || view_a.depth(&e) <= T::zero()
        || view_b.depth(&s) <= T::zero()
        || view_b.depth(&e) <= T::zero()
    {
        return Err(Error::DegenerateTriangulation);
    }
    Segment3::from_endpoints(s, e).map_err(|_| Error::DegenerateTriangulation)
}

/// Result of multi-view point triangulation.
#[derive(Debug, Clone)]
pub struct PointTriangulation<T: Real> {
    pub point: Vector3<T>,
    /// Per-observation reprojection residual `pi(X) - x`, pixels.
    pub residuals: Vec<Vector2<T>>,
}

/// Linear (DLT on normalized coordinates) initialization followed by
/// Gauss-Newton on the squared reprojection error.
pub fn triangulate_point_multiview<T: Real>(
    observations: &[(&CameraView<T>, Vector2<T>)],
) -> Result<PointTriangulation<T>> {
    if observations.len() < 2 {
        return Err(Error::DegenerateTriangulation);
    }
    // Rays must not all be parallel.
    let rays: Vec<Vector3<T>> = observations
        .iter()
        .map(|(v, x)| v.ray_direction(x))
        .collect();
    let mut max_sin = T::zero();
    for i in 0..rays.len() {
        for j in i + 1..rays.len() {
            max_sin = max_sin.max(rays[i].cross(&rays[j]).norm());
        }
    }
    if max_sin < T::lit(1e-6) {
        return Err(Error::DegenerateTriangulation);
    }

    let mut a = DMatrix::<T>::zeros(2 * observations.len(), 4);
    for (k, (view, x)) in observations.iter().enumerate() {
        let xn = view.intrinsics.normalize(x);
        let r = view.rotation;
        let t = view.translation;
        for (row, coord) in [(2 * k, xn.x), (2 * k + 1, xn.y)] {
            let axis = row - 2 * k;
            for c in 0..3 {
                a[(row, c)] = coord * r[(2, c)] - r[(axis, c)];
            }
            a[(row, 3)] = coord * t.z - t[axis];
        }
    }
    let svd = a.svd(false, true);
    let vt = svd.v_t.ok_or(Error::DegenerateTriangulation)?;
    let (imin, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .fold((0, T::max_value().unwrap()), |acc, (i, s)| {
            if *s < acc.1 {
                (i, *s)
            } else {
                acc
            }
        });
    let row = vt.row(imin);
    let h = Vector4::new(row[0], row[1], row[2], row[3]);
    if h.w.abs() < T::lit(1e-12) * h.norm() {
        return Err(Error::DegenerateTriangulation);
    }
    let mut x = Vector3::new(h.x / h.w, h.y / h.w, h.z / h.w);

    let cost = |x: &Vector3<T>| -> Option<T> {
        let mut c = T::zero();
        for (v, obs) in observations {
            let p = v.project_point(x).ok()?;
            c += (p - obs).norm_squared();
        }
        Some(c)
    };
    if cost(&x).is_none() {
        return Err(Error::BehindCamera);
    }

    let mut lambda = T::lit(1e-6);
    let mut current = cost(&x).unwrap();
    for _ in 0..50 {
        let mut jtj = Matrix3::<T>::zeros();
        let mut jtr = Vector3::<T>::zeros();
        for (v, obs) in observations {
            let (r, j) = point_residual_jacobian(v, &x, obs);
            jtj += j.transpose() * j;
            jtr += j.transpose() * r;
        }
        let mut improved = false;
        for _ in 0..10 {
            let mut damped = jtj;
            for i in 0..3 {
                damped[(i, i)] += lambda * (T::one() + jtj[(i, i)]);
            }
            let Some(step) = damped.lu().solve(&(-jtr)) else {
                break;
            };
            let cand = x + step;
            if let Some(c) = cost(&cand) {
                if c <= current {
                    let rel = (current - c) / (current + T::lit(1e-30));
                    x = cand;
                    current = c;
                    lambda = (lambda * T::lit(0.1)).max(T::lit(1e-12));
                    improved = rel > T::lit(1e-14) && step.norm() > T::lit(1e-15) * x.norm();
                    break;
                }
            }
            lambda *= T::lit(10.0);
        }
        if !improved {
            break;
        }
    }

    let mut residuals = Vec::with_capacity(observations.len());
    for (v, obs) in observations {
        let p = v.project_point(&x)?;
        residuals.push(p - obs);
    }
    Ok(PointTriangulation { point: x, residuals })
}

/// Reprojection residual `pi(X) - x` and its Jacobian w.r.t. `X`.
pub fn point_residual_jacobian<T: Real>(
    view: &CameraView<T>,
    x: &Vector3<T>,
    obs: &Vector2<T>,
) -> (Vector2<T>, nalgebra::Matrix2x3<T>) {
    let pc = view.to_camera(x);
    let k = &view.intrinsics;
    let iz = T::one() / pc.z;
    let u = k.fu * pc.x * iz + k.cu;
    let v = k.fv * pc.y * iz + k.cv;
    let dproj = nalgebra::Matrix2x3::new(
        k.fu * iz,
        T::zero(),
        -k.fu * pc.x * iz * iz,
        T::zero(),
        k.fv * iz,
        -k.fv * pc.y * iz * iz,
    );
    (Vector2::new(u - obs.x, v - obs.y), dproj * view.rotation)
}
