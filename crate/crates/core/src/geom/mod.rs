//! Core geometry: cameras, Plücker lines, projections, distances and
//! triangulation primitives.

pub mod camera;
pub mod line;
pub mod so3;
pub mod triangulate;

pub use camera::{CameraView, Intrinsics};
pub use line::{
    ortho_from_plucker, orthogonal_unit, plucker_from_ortho, Line3, OrthoLine, Segment2, Segment3,
};
pub use triangulate::{
    backproject_line, point_residual_jacobian, triangulate_line_two_view,
    triangulate_point_multiview, unproject_endpoint_to_line, PointTriangulation,
};

use nalgebra::{Vector2, Vector3};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[inline]
pub fn homogeneous<T: Real>(x: &Vector2<T>) -> Vector3<T> {
    Vector3::new(x.x, x.y, T::one())
}

/// Signed perpendicular distance `x~^T l / sqrt(l1^2 + l2^2)`, pixels.
pub fn perp_distance<T: Real>(x: &Vector2<T>, l: &Vector3<T>) -> Result<T> {
    let n2 = l.x * l.x + l.y * l.y;
    if n2 <= T::zero() {
        return Err(Error::DegenerateLine);
    }
    Ok(homogeneous(x).dot(l) / n2.sqrt())
}

/// Angle between two segments' undirected directions, degrees in `[0, 90]`.
pub fn angular_distance_2d<T: Real>(a: &Segment2<T>, b: &Segment2<T>) -> T {
    let c = a.direction().dot(&b.direction()).abs().min(T::one());
    c.acos().degrees()
}

/// Angle between a segment and the direction of a homogeneous line, degrees.
pub fn angle_to_line<T: Real>(seg: &Segment2<T>, l: &Vector3<T>) -> T {
    let dir = Vector2::new(-l.y, l.x).normalize();
    seg.direction().dot(&dir).abs().min(T::one()).acos().degrees()
}

/// Fraction of `a` covered by the orthogonal projection of `b` onto `a`'s
/// span.
pub fn overlap_2d<T: Real>(a: &Segment2<T>, b: &Segment2<T>) -> T {
    let len = a.length();
    let dir = a.direction();
    let s = dir.dot(&(b.start - a.start));
    let e = dir.dot(&(b.end - a.start));
    let lo = s.min(e).max(T::zero());
    let hi = s.max(e).min(len);
    ((hi - lo) / len).max(T::zero()).min(T::one())
}

/// Larger of the two directional overlaps.
pub fn mutual_overlap<T: Real>(a: &Segment2<T>, b: &Segment2<T>) -> T {
    overlap_2d(a, b).max(overlap_2d(b, a))
}

/// Maximum absolute endpoint distance of `seg` to the line `l`.
pub fn max_endpoint_distance<T: Real>(seg: &Segment2<T>, l: &Vector3<T>) -> Result<T> {
    Ok(perp_distance(&seg.start, l)?
        .abs()
        .max(perp_distance(&seg.end, l)?.abs()))
}

/// Projects both endpoints of a 3D segment.
pub fn project_segment<T: Real>(view: &CameraView<T>, seg: &Segment3<T>) -> Result<Segment2<T>> {
    let a = view.project_point(&seg.start)?;
    let b = view.project_point(&seg.end)?;
    Segment2::new(a, b)
}
