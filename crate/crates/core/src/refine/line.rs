//! Fixed-pose refinement of one infinite line over its orthonormal chart.

use nalgebra::{Matrix4, Vector4};

use crate::error::{Error, Result};
use crate::geom::OrthoLine;
use crate::residual::{line_cost, line_cost_derivatives, LineObservation};
use crate::robust::Kernel;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit<T: Real> {
    pub phi: OrthoLine<T>,
    pub initial_cost: T,
    pub cost: T,
    pub gradient_norm: T,
    pub iterations: usize,
}

fn add_phi<T: Real>(phi: &OrthoLine<T>, delta: &Vector4<T>) -> OrthoLine<T> {
    OrthoLine::new(
        phi.theta + delta.fixed_rows::<3>(0),
        phi.rho + delta[3],
    )
}

/// Damped Newton iterations on the exact Hessian, falling back to the
/// Gauss-Newton matrix where the Hessian is indefinite. Steps are accepted
/// only if the robust cost does not increase by more than `1e-10 (1 +
/// cost)`, and ties must shrink the gradient.
pub fn optimize_line<T: Real>(
    phi0: &OrthoLine<T>,
    obs: &[LineObservation<T>],
    kernel: &Kernel<T>,
    max_iterations: usize,
    gradient_tol: T,
) -> Result<LineFit<T>> {
    let mut phi = *phi0;
    let (mut cost, mut grad, mut hess, mut gn) = line_cost_derivatives(&phi, obs, kernel)?;
    if !cost.is_finite() {
        return Err(Error::OptimizationDiverged);
    }
    let initial_cost = cost;
    let mut lambda = T::lit(1e-6);
    let mut iterations = 0;
    while iterations < max_iterations && grad.norm() >= gradient_tol {
        iterations += 1;
        let scale = hess.diagonal().abs().max().max(T::lit(1e-12));
        let mut accepted = false;
        for _ in 0..12 {
            let damped = hess + Matrix4::identity() * (lambda * scale);
            let step = match damped.cholesky() {
                Some(c) => c.solve(&grad),
                None => {
                    let d = gn + Matrix4::identity() * (lambda * scale);
                    match d.cholesky() {
                        Some(c) => c.solve(&grad),
                        None => {
                            lambda *= T::lit(10.0);
                            continue;
                        }
                    }
                }
            };
            let cand = add_phi(&phi, &(-step));
            let c = match line_cost(&cand, obs, kernel) {
                Ok(c) if c.is_finite() => c,
                _ => {
                    lambda *= T::lit(10.0);
                    continue;
                }
            };
            // Near the optimum, cost changes fall below the evaluation noise
            // of the endpoint distances; such steps are accepted only if
            // they shrink the gradient.
            let slack = (T::one() + cost.abs()) * T::lit(1e-10);
            if c <= cost + slack {
                let (nc, ng, nh, ngn) = line_cost_derivatives(&cand, obs, kernel)?;
                if c < cost - slack || ng.norm() < grad.norm() * T::lit(0.9) {
                    phi = cand;
                    cost = nc;
                    grad = ng;
                    hess = nh;
                    gn = ngn;
                    lambda = (lambda / T::lit(10.0)).max(T::lit(1e-12));
                    accepted = true;
                    break;
                }
            }
            lambda *= T::lit(10.0);
        }
        if !accepted {
            break;
        }
    }
    Ok(LineFit {
        phi,
        initial_cost,
        cost,
        gradient_norm: grad.norm(),
        iterations,
    })
}
