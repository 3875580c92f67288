//! Endpoint-to-line residuals of a 3D line in the orthonormal chart, with
//! first and second derivatives.
//!
//! `D(x, l) = x~^T l / sqrt(l1^2 + l2^2)` with `l = P_l L~(Phi)`. `D` is
//! homogeneous of degree zero in `L~`, so the normalization `L = L~ / |d~|`
//! drops out of every derivative and the unnormalized coordinates are
//! differentiated directly.

use nalgebra::{Matrix2x3, Matrix2x6, RowVector6, Matrix3, Matrix3x4, Matrix4, Matrix4x2, RowVector2, RowVector4, Vector2, Vector3, Vector6};

use crate::error::{Error, Result};
use crate::geom::so3::{left_jacobian, left_jacobian_derivatives, skew};
use crate::geom::{line::plucker_from_ortho, CameraView, Line3, OrthoLine};
use crate::robust::Kernel;
use crate::scalar::Real;

/// `L~(Phi)` and its first and second derivatives (6-vectors per entry).
#[derive(Debug, Clone)]
pub struct PluckerChart<T: Real> {
    pub value: Vector6<T>,
    pub first: [Vector6<T>; 4],
    pub second: [[Vector6<T>; 4]; 4],
}

fn stack<T: Real>(a: &Vector3<T>, b: &Vector3<T>) -> Vector6<T> {
    Vector6::new(a.x, a.y, a.z, b.x, b.y, b.z)
}

impl<T: Real> PluckerChart<T> {
    pub fn new(phi: &OrthoLine<T>) -> Self {
        let u = phi.rotation();
        let u1: Vector3<T> = u.column(0).into();
        let u2: Vector3<T> = u.column(1).into();
        let (w1, w2) = (phi.rho.cos(), phi.rho.sin());
        let jl = left_jacobian(&phi.theta);
        let djl = left_jacobian_derivatives(&phi.theta);
        // dU/dtheta_i = (J_L e_i)^ U.
        let a: [Matrix3<T>; 3] = std::array::from_fn(|i| skew(&jl.column(i).into()));
        let du1: [Vector3<T>; 3] = std::array::from_fn(|i| a[i] * u1);
        let du2: [Vector3<T>; 3] = std::array::from_fn(|i| a[i] * u2);

        let mut first = [Vector6::zeros(); 4];
        for i in 0..3 {
            first[i] = stack(&(du1[i] * w1), &(du2[i] * w2));
        }
        first[3] = stack(&(u1 * -w2), &(u2 * w1));

        let mut second = [[Vector6::zeros(); 4]; 4];
        for i in 0..3 {
            for j in 0..3 {
                // d/dtheta_j [(J_L e_i)^ U] = ((dJ_L/dtheta_j) e_i)^ U + (J_L e_i)^ (J_L e_j)^ U.
                let b = skew(&djl[j].column(i).into()) + a[i] * a[j];
                second[i][j] = stack(&(b * u1 * w1), &(b * u2 * w2));
            }
            let mixed = stack(&(du1[i] * -w2), &(du2[i] * w1));
            second[i][3] = mixed;
            second[3][i] = mixed;
        }
        second[3][3] = stack(&(u1 * -w1), &(u2 * -w2));
        Self {
            value: stack(&(u1 * w1), &(u2 * w2)),
            first,
            second,
        }
    }

    /// `dL~/dPhi` as a 6x4 matrix.
    pub fn jacobian(&self) -> nalgebra::Matrix6x4<T> {
        nalgebra::Matrix6x4::from_columns(&self.first)
    }
}

/// `D(x, l)` and derivatives w.r.t. `l` and `x` for a fixed image line.
struct PointLine<T: Real> {
    d: T,
    dl: nalgebra::RowVector3<T>,
    dll: Matrix3<T>,
    dx: RowVector2<T>,
    /// `d^2 D / (dl dx)`, 3x2.
    dlx: nalgebra::Matrix3x2<T>,
}

fn point_line<T: Real>(x: &Vector2<T>, l: &Vector3<T>) -> Result<PointLine<T>> {
    let n2 = l.x * l.x + l.y * l.y;
    if n2 <= T::zero() {
        return Err(Error::DegenerateLine);
    }
    let n = n2.sqrt();
    let xh = Vector3::new(x.x, x.y, T::one());
    let s = xh.dot(l);
    let d = s / n;
    let lp = Vector3::new(l.x, l.y, T::zero());
    let n3 = n2 * n;
    let dl = (xh / n - lp * (s / n3)).transpose();
    let dpp = Matrix3::from_diagonal(&Vector3::new(T::one(), T::one(), T::zero()));
    let dll = -(xh * lp.transpose() + lp * xh.transpose()) / n3 - dpp * (s / n3)
        + lp * lp.transpose() * (T::lit(3.0) * s / (n3 * n2));
    let dx = RowVector2::new(l.x / n, l.y / n);
    let mut dlx = nalgebra::Matrix3x2::zeros();
    for a in 0..2 {
        for b in 0..2 {
            let delta = if a == b { T::one() } else { T::zero() };
            dlx[(b, a)] = delta / n - l[a] * l[b] / n3;
        }
    }
    Ok(PointLine { d, dl, dll, dx, dlx })
}

/// One endpoint residual with derivatives w.r.t. `Phi` and the endpoint.
#[derive(Debug, Clone)]
pub struct EndpointTerm<T: Real> {
    pub d: T,
    pub d_phi: RowVector4<T>,
    pub d_phi_phi: Matrix4<T>,
    pub d_x: RowVector2<T>,
    pub d_phi_x: Matrix4x2<T>,
}

/// Residual derivatives of a line observed by one view.
pub struct ViewLine<T: Real> {
    l: Vector3<T>,
    l_phi: Matrix3x4<T>,
    l_phi_phi: [[Vector3<T>; 4]; 4],
}

impl<T: Real> ViewLine<T> {
    pub fn new(view: &CameraView<T>, chart: &PluckerChart<T>) -> Self {
        let p = view.line_projection_matrix();
        let l_phi = p * chart.jacobian();
        let l_phi_phi = std::array::from_fn(|i| std::array::from_fn(|j| p * chart.second[i][j]));
        Self {
            l: p * chart.value,
            l_phi,
            l_phi_phi,
        }
    }

    pub fn line(&self) -> Vector3<T> {
        self.l
    }

    /// `D` and `dD/dPhi` only.
    pub fn first_order(&self, x: &Vector2<T>) -> Result<(T, RowVector4<T>)> {
        let pl = point_line(x, &self.l)?;
        Ok((pl.d, pl.dl * self.l_phi))
    }

    pub fn endpoint(&self, x: &Vector2<T>) -> Result<EndpointTerm<T>> {
        let pl = point_line(x, &self.l)?;
        let d_phi = pl.dl * self.l_phi;
        let mut d_phi_phi = self.l_phi.transpose() * pl.dll * self.l_phi;
        for i in 0..4 {
            for j in 0..4 {
                d_phi_phi[(i, j)] += pl.dl.dot(&self.l_phi_phi[i][j].transpose());
            }
        }
        Ok(EndpointTerm {
            d: pl.d,
            d_phi,
            d_phi_phi,
            d_x: pl.dx,
            d_phi_x: self.l_phi.transpose() * pl.dlx,
        })
    }
}

/// One 2D segment observation of a 3D line in a posed view.
#[derive(Debug, Clone, Copy)]
pub struct LineObservation<'a, T: Real> {
    pub view: &'a CameraView<T>,
    pub start: Vector2<T>,
    pub end: Vector2<T>,
}

/// Robust cost `sum rho(D^2)` over all endpoints.
pub fn line_cost<T: Real>(phi: &OrthoLine<T>, obs: &[LineObservation<T>], kernel: &Kernel<T>) -> Result<T> {
    let line = plucker_from_ortho(phi)?;
    let mut c = T::zero();
    for o in obs {
        let l = o.view.line_projection_matrix() * line.to_vector();
        for x in [o.start, o.end] {
            let d = point_line(&x, &l)?.d;
            c += kernel.rho(d * d);
        }
    }
    Ok(c)
}

/// Gradient and exact Hessian of the robust line cost w.r.t. `Phi`.
pub fn line_cost_derivatives<T: Real>(
    phi: &OrthoLine<T>,
    obs: &[LineObservation<T>],
    kernel: &Kernel<T>,
) -> Result<(T, nalgebra::Vector4<T>, Matrix4<T>, Matrix4<T>)> {
    let chart = PluckerChart::new(phi);
    let mut cost = T::zero();
    let mut grad = nalgebra::Vector4::zeros();
    let mut hess = Matrix4::zeros();
    let mut gn = Matrix4::zeros();
    let two = T::lit(2.0);
    for o in obs {
        let vl = ViewLine::new(o.view, &chart);
        for x in [o.start, o.end] {
            let e = vl.endpoint(&x)?;
            let s = e.d * e.d;
            let (g1, g2) = (kernel.d1(s), kernel.d2(s));
            cost += kernel.rho(s);
            grad += e.d_phi.transpose() * (two * g1 * e.d);
            let jj = e.d_phi.transpose() * e.d_phi;
            hess += jj * (T::lit(4.0) * g2 * s + two * g1) + e.d_phi_phi * (two * g1 * e.d);
            gn += jj * (two * g1);
        }
    }
    Ok((cost, grad, hess, gn))
}

/// Pixel residual of a point and its Jacobian w.r.t. the point, re-exported
/// for symmetry with the line terms.
pub fn point_term<T: Real>(view: &CameraView<T>, x: &Vector3<T>, obs: &Vector2<T>) -> (Vector2<T>, Matrix2x3<T>) {
    crate::geom::point_residual_jacobian(view, x, obs)
}

/// Signed endpoint distances of an observation to the projection of `line`.
pub fn line_residual<T: Real>(view: &CameraView<T>, line: &Line3<T>, start: &Vector2<T>, end: &Vector2<T>) -> Result<Vector2<T>> {
    let l = view.line_projection_matrix() * line.to_vector();
    Ok(Vector2::new(point_line(start, &l)?.d, point_line(end, &l)?.d))
}

/// `D` of one endpoint with derivatives w.r.t. `Phi` and the left pose
/// increment `(dw, dt)` under `R <- exp(dw) R`, `t <- t + dt`.
pub fn endpoint_pose_jacobian<T: Real>(
    view: &CameraView<T>,
    chart: &PluckerChart<T>,
    x: &Vector2<T>,
) -> Result<(T, RowVector4<T>, RowVector6<T>)> {
    let p = view.line_projection_matrix();
    let pl = point_line(x, &(p * chart.value))?;
    let d_phi = pl.dl * p * chart.jacobian();
    let kl = view.intrinsics.line_matrix();
    let rd = view.rotation * chart.value.fixed_rows::<3>(0);
    let rm = view.rotation * chart.value.fixed_rows::<3>(3);
    let srd = skew(&rd);
    let dw = kl * (-skew(&rm) - skew(&view.translation) * srd);
    let dt = -(kl * srd);
    let mut d_pose = RowVector6::zeros();
    d_pose.fixed_columns_mut::<3>(0).copy_from(&(pl.dl * dw));
    d_pose.fixed_columns_mut::<3>(3).copy_from(&(pl.dl * dt));
    Ok((pl.d, d_phi, d_pose))
}

/// Point residual `pi(X) - x` with Jacobians w.r.t. `X` and the left pose
/// increment.
pub fn point_pose_jacobian<T: Real>(
    view: &CameraView<T>,
    x: &Vector3<T>,
    obs: &Vector2<T>,
) -> (Vector2<T>, Matrix2x3<T>, Matrix2x6<T>) {
    let (r, jx) = crate::geom::point_residual_jacobian(view, x, obs);
    // jx = dproj * R, and dX_c = -[R X]x dw + dt.
    let dproj = jx * view.rotation.transpose();
    let mut jp = Matrix2x6::zeros();
    jp.fixed_columns_mut::<3>(0).copy_from(&(dproj * -skew(&(view.rotation * x))));
    jp.fixed_columns_mut::<3>(3).copy_from(&dproj);
    (r, jx, jp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{so3, Intrinsics};

    fn phi_at(p: &[f64; 4]) -> OrthoLine<f64> {
        OrthoLine::from_array(p)
    }

    fn bumped(p: &[f64; 4], i: usize, h: f64) -> [f64; 4] {
        let mut q = *p;
        q[i] += h;
        q
    }

    #[test]
    fn chart_derivatives_match_differences() {
        for p in [[0.3, -0.7, 1.1, 0.4], [1e-3, 2e-3, -1e-3, -0.9], [0.0, 0.0, 0.0, 0.2]] {
            let c = PluckerChart::new(&phi_at(&p));
            let h = 1e-5;
            for i in 0..4 {
                let cp = PluckerChart::new(&phi_at(&bumped(&p, i, h)));
                let cm = PluckerChart::new(&phi_at(&bumped(&p, i, -h)));
                let fd = (cp.value - cm.value) / (2.0 * h);
                assert!((fd - c.first[i]).norm() < 1e-8, "first {i} {p:?}");
                for j in 0..4 {
                    let fd2 = (cp.first[j] - cm.first[j]) / (2.0 * h);
                    assert!((fd2 - c.second[j][i]).norm() < 1e-7, "second {i}{j} {p:?}");
                }
            }
        }
    }

    #[test]
    fn endpoint_derivatives_match_differences() {
        let view = CameraView::new(
            0,
            Intrinsics::new(500.0, 480.0, 320.0, 240.0),
            so3::exp(&nalgebra::Vector3::new(0.1, -0.2, 0.05)),
            nalgebra::Vector3::new(0.3, -0.1, 4.0),
        )
        .unwrap();
        let p = [0.4, 0.2, -0.3, 0.6];
        let x = Vector2::new(250.0, 180.0);
        let term = |p: &[f64; 4], x: &Vector2<f64>| {
            ViewLine::new(&view, &PluckerChart::new(&phi_at(p))).endpoint(x).unwrap()
        };
        let e = term(&p, &x);
        let h = 1e-6;
        for i in 0..4 {
            let ep = term(&bumped(&p, i, h), &x);
            let em = term(&bumped(&p, i, -h), &x);
            let fd = (ep.d - em.d) / (2.0 * h);
            assert!((fd - e.d_phi[i]).abs() < 1e-5 * (1.0 + fd.abs()));
            for j in 0..4 {
                let fd2 = (ep.d_phi[j] - em.d_phi[j]) / (2.0 * h);
                assert!((fd2 - e.d_phi_phi[(j, i)]).abs() < 1e-4 * (1.0 + fd2.abs()), "{i}{j}");
            }
        }
        for a in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[a] += 1e-4;
            xm[a] -= 1e-4;
            let (ep, em) = (term(&p, &xp), term(&p, &xm));
            assert!(((ep.d - em.d) / 2e-4 - e.d_x[a]).abs() < 1e-8);
            let fd = (ep.d_phi - em.d_phi) / 2e-4;
            for i in 0..4 {
                assert!((fd[i] - e.d_phi_x[(i, a)]).abs() < 1e-6 * (1.0 + fd[i].abs()));
            }
        }
    }

    fn perturbed(view: &CameraView<f64>, delta: &nalgebra::Vector6<f64>) -> CameraView<f64> {
        let w = nalgebra::Vector3::new(delta[0], delta[1], delta[2]);
        let t = nalgebra::Vector3::new(delta[3], delta[4], delta[5]);
        CameraView { rotation: so3::exp(&w) * view.rotation, translation: view.translation + t, ..*view }
    }

    #[test]
    fn pose_jacobians_match_differences() {
        let view = CameraView::new(
            0,
            Intrinsics::new(500.0, 480.0, 320.0, 240.0),
            so3::exp(&nalgebra::Vector3::new(0.1, -0.2, 0.05)),
            nalgebra::Vector3::new(0.3, -0.1, 4.0),
        )
        .unwrap();
        let chart = PluckerChart::new(&phi_at(&[0.4, 0.2, -0.3, 0.6]));
        let x = Vector2::new(250.0, 180.0);
        let (_, _, jp) = endpoint_pose_jacobian(&view, &chart, &x).unwrap();
        let pt = nalgebra::Vector3::new(0.2, 0.4, 1.0);
        let (_, _, jpp) = point_pose_jacobian(&view, &pt, &x);
        let h = 1e-6;
        for i in 0..6 {
            let mut e = nalgebra::Vector6::zeros();
            e[i] = h;
            let (vp, vm) = (perturbed(&view, &e), perturbed(&view, &-e));
            let dp = endpoint_pose_jacobian(&vp, &chart, &x).unwrap().0;
            let dm = endpoint_pose_jacobian(&vm, &chart, &x).unwrap().0;
            let fd = (dp - dm) / (2.0 * h);
            assert!((fd - jp[i]).abs() < 1e-5 * (1.0 + fd.abs()), "line {i}: {fd} vs {}", jp[i]);
            let rp = point_pose_jacobian(&vp, &pt, &x).0;
            let rm = point_pose_jacobian(&vm, &pt, &x).0;
            let fd = (rp - rm) / (2.0 * h);
            assert!((fd - jpp.column(i)).norm() < 1e-5 * (1.0 + fd.norm()), "point {i}");
        }
    }
}
