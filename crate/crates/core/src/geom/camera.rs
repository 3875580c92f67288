use nalgebra::{Matrix3, Matrix3x6, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::line::Line3;
use super::so3::skew;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Pinhole intrinsics with zero skew.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics<T> {
    pub fu: T,
    pub fv: T,
    pub cu: T,
    pub cv: T,
}

impl<T: Real> Intrinsics<T> {
    pub fn new(fu: T, fv: T, cu: T, cv: T) -> Self {
        Self { fu, fv, cu, cv }
    }

    pub fn matrix(&self) -> Matrix3<T> {
        let (z, o) = (T::zero(), T::one());
        Matrix3::new(self.fu, z, self.cu, z, self.fv, self.cv, z, z, o)
    }

    pub fn inverse_matrix(&self) -> Matrix3<T> {
        let (z, o) = (T::zero(), T::one());
        Matrix3::new(
            o / self.fu,
            z,
            -self.cu / self.fu,
            z,
            o / self.fv,
            -self.cv / self.fv,
            z,
            z,
            o,
        )
    }

    /// Line intrinsics `K_l`, proportional to `K^{-T}`.
    pub fn line_matrix(&self) -> Matrix3<T> {
        let z = T::zero();
        Matrix3::new(
            self.fv,
            z,
            z,
            z,
            self.fu,
            z,
            -self.fv * self.cu,
            -self.fu * self.cv,
            self.fu * self.fv,
        )
    }

    /// Mean focal length.
    pub fn focal(&self) -> T {
        (self.fu + self.fv) * T::lit(0.5)
    }

    /// Normalized image coordinates `K^{-1} [x; 1]`.
    pub fn normalize(&self, x: &Vector2<T>) -> Vector3<T> {
        Vector3::new((x.x - self.cu) / self.fu, (x.y - self.cv) / self.fv, T::one())
    }

    pub fn denormalize(&self, p: &Vector3<T>) -> Vector2<T> {
        Vector2::new(
            self.fu * p.x / p.z + self.cu,
            self.fv * p.y / p.z + self.cv,
        )
    }
}

/// One image: intrinsics plus world-to-camera pose `x_c = R x_w + t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraView<T: Real> {
    pub view_id: u32,
    pub intrinsics: Intrinsics<T>,
    pub rotation: Matrix3<T>,
    pub translation: Vector3<T>,
}

impl<T: Real> CameraView<T> {
    /// Builds a view, checking `R in SO(3)` and positive focal lengths.
    pub fn new(
        view_id: u32,
        intrinsics: Intrinsics<T>,
        rotation: Matrix3<T>,
        translation: Vector3<T>,
    ) -> Result<Self> {
        let tol = if T::default_epsilon() < T::lit(1e-10) {
            T::lit(1e-9)
        } else {
            T::lit(1e-4)
        };
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        let det = (rotation.determinant() - T::one()).abs();
        if ortho > tol || det > tol || intrinsics.fu <= T::zero() || intrinsics.fv <= T::zero() {
            return Err(Error::DegenerateInput);
        }
        Ok(Self {
            view_id,
            intrinsics,
            rotation,
            translation,
        })
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<T> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn to_camera(&self, x: &Vector3<T>) -> Vector3<T> {
        self.rotation * x + self.translation
    }

    pub fn depth(&self, x: &Vector3<T>) -> T {
        self.to_camera(x).z
    }

    /// World-frame unit direction of the viewing ray through pixel `x`.
    pub fn ray_direction(&self, x: &Vector2<T>) -> Vector3<T> {
        (self.rotation.transpose() * self.intrinsics.normalize(x)).normalize()
    }

    /// Unit bearing in the camera frame.
    pub fn bearing(&self, x: &Vector2<T>) -> Vector3<T> {
        self.intrinsics.normalize(x).normalize()
    }

    pub fn project_point(&self, x: &Vector3<T>) -> Result<Vector2<T>> {
        let pc = self.to_camera(x);
        if pc.z <= T::lit(1e-9) {
            return Err(Error::BehindCamera);
        }
        Ok(self.intrinsics.denormalize(&pc))
    }

    /// `P_l = [K_l 0] H` with `H = [[t]x R, R; R, 0]`, acting on `[d; m]`.
    pub fn line_projection_matrix(&self) -> Matrix3x6<T> {
        let kl = self.intrinsics.line_matrix();
        let r = self.rotation;
        let top_left = kl * skew(&self.translation) * r;
        let top_right = kl * r;
        let mut p = Matrix3x6::zeros();
        p.fixed_view_mut::<3, 3>(0, 0).copy_from(&top_left);
        p.fixed_view_mut::<3, 3>(0, 3).copy_from(&top_right);
        p
    }

    /// Homogeneous image line of an infinite 3D line.
    pub fn project_line(&self, line: &Line3<T>) -> Result<Vector3<T>> {
        let l = self.line_projection_matrix() * line.to_vector();
        if l.x * l.x + l.y * l.y < T::lit(1e-18) * l.norm_squared().max(T::one()) {
            return Err(Error::DegenerateProjection);
        }
        Ok(l)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_view() -> CameraView<f64> {
        CameraView::new(
            0,
            Intrinsics::new(1.0, 1.0, 0.0, 0.0),
            Matrix3::identity(),
            Vector3::zeros(),
        )
        .unwrap()
    }

    #[test]
    fn optical_axis_projects_to_principal_point() {
        let mut v = unit_view();
        v.intrinsics = Intrinsics::new(500.0, 510.0, 320.0, 240.0);
        let x = v.project_point(&Vector3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!(x, Vector2::new(320.0, 240.0));
        assert_eq!(
            v.project_point(&Vector3::new(0.0, 0.0, -1.0)),
            Err(Error::BehindCamera)
        );
        assert_eq!(
            v.project_point(&Vector3::new(1.0, 0.0, 0.0)),
            Err(Error::BehindCamera)
        );
    }

    #[test]
    fn identity_line_projection_matrix() {
        let p = unit_view().line_projection_matrix();
        let mut expected = Matrix3x6::zeros();
        expected[(0, 3)] = 1.0;
        expected[(1, 4)] = 1.0;
        expected[(2, 5)] = 1.0;
        assert_eq!(p, expected);
        // [t]x = 0 so the block acting on d vanishes.
        assert_eq!(p.fixed_view::<3, 3>(0, 0).abs().max(), 0.0);
    }

    #[test]
    fn rejects_non_rotation() {
        let r = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
        assert!(CameraView::new(0, Intrinsics::new(1.0, 1.0, 0.0, 0.0), r, Vector3::zeros()).is_err());
        assert!(CameraView::new(
            0,
            Intrinsics::new(-1.0, 1.0, 0.0, 0.0),
            Matrix3::identity(),
            Vector3::zeros()
        )
        .is_err());
    }

    #[test]
    fn line_through_center_fails_to_project() {
        let l = Line3::from_endpoints(&Vector3::new(0.0, 0.0, 1.0), &Vector3::new(0.0, 0.0, 2.0)).unwrap();
        assert_eq!(unit_view().project_line(&l), Err(Error::DegenerateProjection));
    }
}
