//! First-order covariance propagation for triangulated points and lines.
//!
//! Points invert the Gauss-Newton Hessian of the reprojection cost. Lines
//! use sensitivity analysis of the stationarity condition `dE/dPhi = 0` of
//! the robust endpoint cost: `dPhi*/dx = -H^{-1} d^2E/(dPhi dx)`, with the
//! full second-order expansion of `D` and the kernel terms `rho'`, `rho''`.
//! Observation noise is unit isotropic per image coordinate.

use nalgebra::{Matrix2, Matrix3, Matrix3x4, Matrix4, Matrix4x2, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::so3::skew;
use crate::geom::{point_residual_jacobian, CameraView, OrthoLine};
use crate::residual::{line_cost_derivatives, LineObservation, PluckerChart, ViewLine};
use crate::robust::Kernel;
use crate::scalar::Real;

/// Largest accepted condition number of the normal or sensitivity matrix.
pub const MAX_CONDITION: f64 = 1e12;

/// Required Newton decrement `sqrt(g^T H^-1 g)` at the optimum before
/// propagating, in the units of the residuals (pixels).
pub const STATIONARITY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineCovariance<T: Real> {
    pub sigma_phi: Matrix4<T>,
    pub endpoints: [Matrix3<T>; 2],
}

fn condition<T: Real, const N: usize>(m: &nalgebra::SMatrix<T, N, N>) -> T {
    let sv = nalgebra::DMatrix::from_column_slice(N, N, m.as_slice()).singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= T::zero() {
        T::max_value().unwrap_or_else(|| T::lit(f64::MAX))
    } else {
        max / min
    }
}

fn symmetrize<T: Real, const N: usize>(m: nalgebra::SMatrix<T, N, N>) -> nalgebra::SMatrix<T, N, N> {
    (m + m.transpose()) * T::lit(0.5)
}

/// `(J^T J)^{-1}` of the stacked reprojection Jacobians at `x`.
pub fn point_covariance<T: Real>(obs: &[(&CameraView<T>, Vector2<T>)], x: &Vector3<T>) -> Result<Matrix3<T>> {
    if obs.len() < 2 {
        return Err(Error::IllConditioned);
    }
    let mut jtj = Matrix3::zeros();
    for (view, o) in obs {
        let (_, j) = point_residual_jacobian(view, x, o);
        jtj += j.transpose() * j;
    }
    if condition(&jtj) > T::lit(MAX_CONDITION) {
        return Err(Error::IllConditioned);
    }
    let inv = jtj.cholesky().ok_or(Error::IllConditioned)?.inverse();
    Ok(symmetrize(inv))
}

/// `dPhi*/dx` for the start and end point of each observation.
pub fn line_jacobian_dphi<T: Real>(
    phi: &OrthoLine<T>,
    obs: &[LineObservation<T>],
    kernel: &Kernel<T>,
) -> Result<Vec<[Matrix4x2<T>; 2]>> {
    let (_, grad, hess, _) = line_cost_derivatives(phi, obs, kernel)?;
    if condition(&hess) > T::lit(MAX_CONDITION) {
        return Err(Error::SingularSystem);
    }
    // Pivoted LU: the closed-form 4x4 inverse loses about cond(H) * eps
    // relative to H's largest entries, which shows up in sigma_px.
    let hinv = hess.full_piv_lu().try_inverse().ok_or(Error::SingularSystem)?;
    // Newton decrement rather than the raw gradient: it does not change
    // when the chart is reparameterized, e.g. by a rescaled world.
    let decrement = grad.dot(&(hinv * grad)).abs().sqrt();
    if decrement >= T::lit(STATIONARITY_TOL) {
        return Err(Error::NotConverged(decrement.as_f64()));
    }
    let chart = PluckerChart::new(phi);
    let two = T::lit(2.0);
    let mut out = Vec::with_capacity(obs.len());
    for o in obs {
        let vl = ViewLine::new(o.view, &chart);
        let mut pair = [Matrix4x2::zeros(); 2];
        for (k, x) in [o.start, o.end].iter().enumerate() {
            let e = vl.endpoint(x)?;
            let s = e.d * e.d;
            let (g1, g2) = (kernel.d1(s), kernel.d2(s));
            let b = e.d_phi.transpose() * e.d_x * (T::lit(4.0) * g2 * s + two * g1)
                + e.d_phi_x * (two * g1 * e.d);
            pair[k] = -(hinv * b);
        }
        out.push(pair);
    }
    Ok(out)
}

/// `Sigma_Phi = sum J J^T` over all endpoint Jacobians.
pub fn line_phi_covariance<T: Real>(
    phi: &OrthoLine<T>,
    obs: &[LineObservation<T>],
    kernel: &Kernel<T>,
) -> Result<Matrix4<T>> {
    let jac = line_jacobian_dphi(phi, obs, kernel)?;
    let mut sigma = Matrix4::zeros();
    for pair in &jac {
        for j in pair {
            sigma += j * j.transpose();
        }
    }
    Ok(symmetrize(sigma))
}

/// `dX_perp/dPhi` for the projection of a fixed point `x` onto the line.
pub fn endpoint_jacobian<T: Real>(phi: &OrthoLine<T>, x: &Vector3<T>) -> Result<Matrix3x4<T>> {
    let chart = PluckerChart::new(phi);
    let dt = chart.value.fixed_rows::<3>(0).into_owned();
    let mt = chart.value.fixed_rows::<3>(3).into_owned();
    let nd = dt.norm();
    if nd < T::lit(1e-12) {
        return Err(Error::DegenerateInput);
    }
    let d = dt / nd;
    let m = mt / nd;
    // Normalization L = L~ / |d~|.
    let i3 = Matrix3::identity();
    let dd_ddt = (i3 - d * d.transpose()) / nd;
    let dm_ddt = -(m * d.transpose()) / nd;
    let dm_dmt = i3 / nd;
    let dx_dm = skew(&d);
    let dx_dd = -skew(&m) + i3 * d.dot(x) + d * x.transpose() - x * d.transpose() * T::lit(2.0);
    let dx_ddt = dx_dd * dd_ddt + dx_dm * dm_ddt;
    let dx_dmt = dx_dm * dm_dmt;
    let jac = chart.jacobian();
    let jd = jac.fixed_rows::<3>(0).into_owned();
    let jm = jac.fixed_rows::<3>(3).into_owned();
    Ok(dx_ddt * jd + dx_dmt * jm)
}

pub fn endpoint_covariance<T: Real>(phi: &OrthoLine<T>, sigma_phi: &Matrix4<T>, x: &Vector3<T>) -> Result<Matrix3<T>> {
    let j = endpoint_jacobian(phi, x)?;
    Ok(symmetrize(j * sigma_phi * j.transpose()))
}

/// Full line covariance with endpoint covariances at `endpoints`.
pub fn line_covariance<T: Real>(
    phi: &OrthoLine<T>,
    obs: &[LineObservation<T>],
    kernel: &Kernel<T>,
    endpoints: &[Vector3<T>; 2],
) -> Result<LineCovariance<T>> {
    let sigma_phi = line_phi_covariance(phi, obs, kernel)?;
    Ok(LineCovariance {
        sigma_phi,
        endpoints: [
            endpoint_covariance(phi, &sigma_phi, &endpoints[0])?,
            endpoint_covariance(phi, &sigma_phi, &endpoints[1])?,
        ],
    })
}

/// Square root of the largest eigenvalue over the given covariances.
pub fn max_sigma<T: Real>(covs: &[Matrix3<T>]) -> T {
    covs.iter()
        .map(|c| c.symmetric_eigenvalues().max().max(T::zero()).sqrt())
        .fold(T::zero(), |a, b| a.max(b))
}

fn median<T: Real>(mut v: Vec<T>) -> T {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) * T::lit(0.5)
    }
}

/// `max_sigma(covs) * median(f / depth)` over the supporting views, where
/// depth is that of `anchor` (point or line midpoint) in each view.
pub fn scale_invariant_sigma<T: Real>(covs: &[Matrix3<T>], views: &[&CameraView<T>], anchor: &Vector3<T>) -> Result<T> {
    let ratios: Vec<T> = views
        .iter()
        .filter_map(|v| {
            let z = v.depth(anchor);
            (z > T::zero()).then(|| v.intrinsics.focal() / z)
        })
        .collect();
    if ratios.is_empty() {
        return Err(Error::NoValidDepth);
    }
    Ok(max_sigma(covs) * median(ratios))
}

/// Standard deviation of the residual `D(x, l(Phi))` in pixels.
pub fn line_reprojection_sigma<T: Real>(
    phi: &OrthoLine<T>,
    sigma_phi: &Matrix4<T>,
    view: &CameraView<T>,
    x: &Vector2<T>,
) -> Result<T> {
    let chart = PluckerChart::new(phi);
    let (_, j) = ViewLine::new(view, &chart).first_order(x)?;
    let var = (j * sigma_phi * j.transpose())[(0, 0)];
    Ok(var.max(T::zero()).sqrt())
}

/// 2x2 covariance of a point's projection.
pub fn point_reprojection_covariance<T: Real>(view: &CameraView<T>, x: &Vector3<T>, sigma: &Matrix3<T>) -> Matrix2<T> {
    let (_, j) = point_residual_jacobian(view, x, &Vector2::zeros());
    symmetrize(j * sigma * j.transpose())
}
