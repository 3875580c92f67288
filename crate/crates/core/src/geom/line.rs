//! Infinite 3D lines in normalized Plücker form and their orthonormal
//! (minimal, 4-DoF) representation.
//!
//! Convention: `d = (a - b) / |a - b|` for a segment from `a` to `b`, and the
//! moment is `m = p x d` for any point `p` on the line. This is the sign
//! convention under which the line projection matrix and the point-to-line
//! projection `X + d x (m + d x X)` hold.

use nalgebra::{Matrix3, Vector2, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use super::so3;
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Line3<T: Real> {
    pub d: Vector3<T>,
    pub m: Vector3<T>,
}

impl<T: Real> Line3<T> {
    pub fn from_endpoints(a: &Vector3<T>, b: &Vector3<T>) -> Result<Self> {
        let diff = a - b;
        let n = diff.norm();
        if n < T::lit(1e-12) {
            return Err(Error::DegenerateInput);
        }
        let d = diff / n;
        Ok(Self { d, m: a.cross(&d) })
    }

    /// Line through `p` with direction `dir` (need not be unit).
    pub fn from_point_direction(p: &Vector3<T>, dir: &Vector3<T>) -> Result<Self> {
        let n = dir.norm();
        if n < T::lit(1e-12) {
            return Err(Error::DegenerateInput);
        }
        let d = dir / n;
        Ok(Self { d, m: p.cross(&d) })
    }

    /// Normalizes unnormalized Plücker coordinates `[d~; m~]`, re-imposing
    /// `d . m = 0`.
    pub fn from_unnormalized(d: &Vector3<T>, m: &Vector3<T>) -> Result<Self> {
        let n = d.norm();
        if n < T::lit(1e-12) {
            return Err(Error::DegenerateInput);
        }
        let d = d / n;
        let m = m / n;
        let m = m - d * d.dot(&m);
        Ok(Self { d, m })
    }

    pub fn to_vector(&self) -> Vector6<T> {
        Vector6::new(self.d.x, self.d.y, self.d.z, self.m.x, self.m.y, self.m.z)
    }

    /// Point on the line closest to the origin.
    pub fn point(&self) -> Vector3<T> {
        self.d.cross(&self.m)
    }

    /// Orthogonal projection of `x` onto the line.
    pub fn project_point(&self, x: &Vector3<T>) -> Vector3<T> {
        x + self.d.cross(&(self.m + self.d.cross(x)))
    }

    pub fn distance_to_point(&self, x: &Vector3<T>) -> T {
        (x - self.project_point(x)).norm()
    }

    /// Signed coordinate of `x` along the direction, relative to `point()`.
    pub fn coordinate(&self, x: &Vector3<T>) -> T {
        self.d.dot(&(x - self.point()))
    }

    pub fn at(&self, s: T) -> Vector3<T> {
        self.point() + self.d * s
    }

    /// Angle between the undirected directions, radians in `[0, pi/2]`.
    pub fn angle_to(&self, other: &Self) -> T {
        self.d.dot(&other.d).abs().min(T::one()).acos()
    }

    pub fn to_ortho(&self) -> OrthoLine<T> {
        ortho_from_plucker(self)
    }
}

/// Minimal parameters `[theta, rho]`: `U = exp(theta^)` in SO(3) and
/// `W(rho)` in SO(2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrthoLine<T: Real> {
    pub theta: Vector3<T>,
    pub rho: T,
}

impl<T: Real> OrthoLine<T> {
    pub fn new(theta: Vector3<T>, rho: T) -> Self {
        Self { theta, rho }
    }

    pub fn to_array(&self) -> [T; 4] {
        [self.theta.x, self.theta.y, self.theta.z, self.rho]
    }

    pub fn from_array(p: &[T; 4]) -> Self {
        Self::new(Vector3::new(p[0], p[1], p[2]), p[3])
    }

    pub fn rotation(&self) -> Matrix3<T> {
        so3::exp(&self.theta)
    }

    /// Unnormalized Plücker coordinates `[cos(rho) u1; sin(rho) u2]`.
    pub fn unnormalized(&self) -> (Vector3<T>, Vector3<T>) {
        let u = self.rotation();
        let u1: Vector3<T> = u.column(0).into();
        let u2: Vector3<T> = u.column(1).into();
        (u1 * self.rho.cos(), u2 * self.rho.sin())
    }

    pub fn to_plucker(&self) -> Result<Line3<T>> {
        plucker_from_ortho(self)
    }
}

/// Any unit vector orthogonal to unit `d`, chosen deterministically from the
/// coordinate axis least aligned with `d`.
pub fn orthogonal_unit<T: Real>(d: &Vector3<T>) -> Vector3<T> {
    let ax = if d.x.abs() <= d.y.abs() && d.x.abs() <= d.z.abs() {
        Vector3::x()
    } else if d.y.abs() <= d.z.abs() {
        Vector3::y()
    } else {
        Vector3::z()
    };
    d.cross(&ax).normalize()
}

/// QR-style decomposition `[d | m] = U diag(w1, w2)`.
///
/// For a line through the origin (`|m| < 1e-12`), `u2` is completed with
/// [`orthogonal_unit`]. Among the four frames `U D` (`D` diagonal with an
/// even number of `-1`s) that describe the same line, the canonical one is
/// kept unless its rotation angle exceeds 120 degrees; then the frame with
/// the largest trace is used so that the axis-angle chart stays away from
/// the half-turn singularity.
pub fn ortho_from_plucker<T: Real>(line: &Line3<T>) -> OrthoLine<T> {
    let dn = line.d.norm();
    let mn = line.m.norm();
    let u1 = line.d / dn;
    let u2 = if mn < T::lit(1e-12) {
        orthogonal_unit(&u1)
    } else {
        line.m / mn
    };
    let u3 = u1.cross(&u2).normalize();
    let u = so3::orthonormalize(&Matrix3::from_columns(&[u1, u2, u3]));
    let (w1, w2) = (dn, if mn < T::lit(1e-12) { T::zero() } else { mn });
    let rho = w2.atan2(w1);

    // Frame variants: (column signs, rho map).
    let neg = -T::one();
    let one = T::one();
    let variants: [([T; 3], T); 4] = [
        ([one, one, one], rho),
        ([neg, neg, one], rho),
        ([neg, one, neg], -rho),
        ([one, neg, neg], -rho),
    ];
    let trace_of = |s: &[T; 3]| u[(0, 0)] * s[0] + u[(1, 1)] * s[1] + u[(2, 2)] * s[2];
    let mut chosen = 0;
    if trace_of(&variants[0].0) < T::zero() {
        let mut best = trace_of(&variants[0].0);
        for (i, v) in variants.iter().enumerate().skip(1) {
            let tr = trace_of(&v.0);
            if tr > best {
                best = tr;
                chosen = i;
            }
        }
    }
    let (signs, rho) = variants[chosen];
    let mut uc = u;
    for (j, s) in signs.iter().enumerate() {
        let col = uc.column(j) * *s;
        uc.set_column(j, &col);
    }
    let theta = so3::log(&uc).expect("frame chosen with trace >= 0");
    OrthoLine { theta, rho }
}

pub fn plucker_from_ortho<T: Real>(phi: &OrthoLine<T>) -> Result<Line3<T>> {
    if phi.rho.cos().abs() < T::lit(1e-12) {
        return Err(Error::DegenerateInput);
    }
    let (d, m) = phi.unnormalized();
    Line3::from_unnormalized(&d, &m)
}

/// A 3D segment; both endpoints lie on `line`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment3<T: Real> {
    pub line: Line3<T>,
    pub start: Vector3<T>,
    pub end: Vector3<T>,
}

impl<T: Real> Segment3<T> {
    pub fn from_endpoints(start: Vector3<T>, end: Vector3<T>) -> Result<Self> {
        Ok(Self {
            line: Line3::from_endpoints(&start, &end)?,
            start,
            end,
        })
    }

    /// Segment on `line` between the projections of `a` and `b`.
    pub fn on_line(line: Line3<T>, a: &Vector3<T>, b: &Vector3<T>) -> Result<Self> {
        let start = line.project_point(a);
        let end = line.project_point(b);
        if (start - end).norm() < T::lit(1e-12) {
            return Err(Error::DegenerateInput);
        }
        Ok(Self { line, start, end })
    }

    pub fn length(&self) -> T {
        (self.start - self.end).norm()
    }

    pub fn midpoint(&self) -> Vector3<T> {
        (self.start + self.end) * T::lit(0.5)
    }
}

/// A 2D segment in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment2<T: Real> {
    pub start: Vector2<T>,
    pub end: Vector2<T>,
}

impl<T: Real> Segment2<T> {
    pub fn new(start: Vector2<T>, end: Vector2<T>) -> Result<Self> {
        if (start - end).norm() <= T::zero() {
            return Err(Error::DegenerateLine);
        }
        Ok(Self { start, end })
    }

    pub fn length(&self) -> T {
        (self.end - self.start).norm()
    }

    pub fn direction(&self) -> Vector2<T> {
        (self.end - self.start).normalize()
    }

    pub fn midpoint(&self) -> Vector2<T> {
        (self.start + self.end) * T::lit(0.5)
    }

    /// Homogeneous line through both endpoints.
    pub fn homogeneous(&self) -> Vector3<T> {
        let a = Vector3::new(self.start.x, self.start.y, T::one());
        let b = Vector3::new(self.end.x, self.end.y, T::one());
        a.cross(&b)
    }
}
