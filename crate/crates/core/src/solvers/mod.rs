//! Minimal absolute-pose solvers over point, line and vanishing-point
//! correspondences.
//!
//! All solvers work in normalized camera coordinates: points as unit
//! bearings, image lines as unit plane normals through the camera center
//! (`K^T l` for a pixel line `l`), vanishing points as unit directions.
//! Poses map world to camera, `X_c = R X + t`.

mod essential;
mod point_line;
mod rotation;
mod vp;

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::geom::{Intrinsics, Segment3};
use crate::scalar::Real;

pub use essential::{decompose_essential, solve_essential_5pt, triangulate_depths};
pub use point_line::{solve_p1p2ll, solve_p2p1ll, solve_p3ll, solve_p3p};
pub use vp::{align_vp_to_axis, solve_vp_1pt_1line, solve_vp_2pt};

/// Angle below which two directions count as parallel in degeneracy checks.
pub const PARALLEL_DEG: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointCorr<T: Real> {
    /// Unit bearing in the camera frame.
    pub bearing: Vector3<T>,
    pub point: Vector3<T>,
}

impl<T: Real> PointCorr<T> {
    pub fn new(bearing: Vector3<T>, point: Vector3<T>) -> Self {
        Self {
            bearing: bearing.normalize(),
            point,
        }
    }

    pub fn from_pixel(k: &Intrinsics<T>, x: &Vector2<T>, point: Vector3<T>) -> Self {
        Self::new(k.normalize(x), point)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineCorr<T: Real> {
    /// Unit normal of the interpretation plane in the camera frame.
    pub line: Vector3<T>,
    /// A point `X_L` on the 3D line.
    pub point: Vector3<T>,
    /// Unit direction `V_L`.
    pub direction: Vector3<T>,
}

impl<T: Real> LineCorr<T> {
    pub fn new(line: Vector3<T>, point: Vector3<T>, direction: Vector3<T>) -> Self {
        Self {
            line: line.normalize(),
            point,
            direction: direction.normalize(),
        }
    }

    /// From a homogeneous pixel line and a 3D segment.
    pub fn from_pixel_line(k: &Intrinsics<T>, l_px: &Vector3<T>, seg: &Segment3<T>) -> Self {
        let l = k.matrix().transpose() * l_px;
        Self::new(l, seg.midpoint(), seg.line.d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VpCorr<T: Real> {
    /// Unit direction in the camera frame (`K^{-1} v`, normalized).
    pub v2d: Vector3<T>,
    /// Unit world direction.
    pub v3d: Vector3<T>,
}

impl<T: Real> VpCorr<T> {
    pub fn new(v2d: Vector3<T>, v3d: Vector3<T>) -> Self {
        Self {
            v2d: v2d.normalize(),
            v3d: v3d.normalize(),
        }
    }

    pub fn from_pixel(k: &Intrinsics<T>, v_px: &Vector3<T>, v3d: Vector3<T>) -> Self {
        Self::new(k.inverse_matrix() * v_px, v3d)
    }

    pub fn flipped(&self) -> Self {
        Self {
            v2d: -self.v2d,
            v3d: self.v3d,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseCandidate<T: Real> {
    pub rotation: Matrix3<T>,
    pub translation: Vector3<T>,
}

impl<T: Real> PoseCandidate<T> {
    pub fn new(rotation: Matrix3<T>, translation: Vector3<T>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Matrix3::identity(), Vector3::zeros())
    }

    pub fn transform(&self, x: &Vector3<T>) -> Vector3<T> {
        self.rotation * x + self.translation
    }

    pub fn center(&self) -> Vector3<T> {
        -(self.rotation.transpose() * self.translation)
    }
}

/// Residual tolerance used to discard spurious algebraic roots.
pub(crate) fn root_tol<T: Real>() -> T {
    T::default_epsilon().sqrt() * T::lit(100.0)
}

pub(crate) fn sin_parallel<T: Real>() -> T {
    T::lit(PARALLEL_DEG).radians().sin()
}

pub(crate) fn nearly_parallel<T: Real>(a: &Vector3<T>, b: &Vector3<T>) -> bool {
    let na = a.norm();
    let nb = b.norm();
    na == T::zero() || nb == T::zero() || a.cross(b).norm() < sin_parallel::<T>() * na * nb
}

/// Two unit vectors spanning the orthogonal complement of `f`.
pub(crate) fn perp_basis<T: Real>(f: &Vector3<T>) -> (Vector3<T>, Vector3<T>) {
    let b1 = crate::geom::line::orthogonal_unit(f);
    let b2 = f.normalize().cross(&b1);
    (b1, b2)
}

pub(crate) fn dedup_poses<T: Real>(poses: Vec<PoseCandidate<T>>) -> Vec<PoseCandidate<T>> {
    let mut out: Vec<PoseCandidate<T>> = Vec::with_capacity(poses.len());
    for p in poses {
        let dup = out.iter().any(|q| {
            (q.rotation - p.rotation).norm() < T::lit(1e-9)
                && (q.translation - p.translation).norm()
                    < T::lit(1e-9) * (T::one() + p.translation.norm())
        });
        if !dup {
            out.push(p);
        }
    }
    out
}
