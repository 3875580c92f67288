use nalgebra::{Matrix6, Vector6};

use super::{score_pose, HybridCorrSet, RansacConfig, Score, Weights};
use crate::geom::so3;
use crate::model::View;
use crate::residual::{endpoint_pose_jacobian, point_pose_jacobian, PluckerChart};
use crate::solvers::PoseCandidate;

fn apply(pose: &PoseCandidate<f64>, dx: &Vector6<f64>) -> PoseCandidate<f64> {
    let w = dx.fixed_rows::<3>(0).into_owned();
    let t = dx.fixed_rows::<3>(3).into_owned();
    PoseCandidate::new(so3::orthonormalize(&(so3::exp(&w) * pose.rotation)), pose.translation + t)
}

struct Terms<'a> {
    corrs: &'a HybridCorrSet,
    points: Vec<(usize, f64)>,
    lines: Vec<(usize, f64, PluckerChart<f64>)>,
}

impl Terms<'_> {
    /// Robust cost and, on request, the IRLS normal equations.
    fn eval(&self, view: &View, cfg: &RansacConfig, normal: bool) -> (f64, Matrix6<f64>, Vector6<f64>) {
        let kernel = &cfg.kernel;
        let mut cost = 0.0;
        let mut h = Matrix6::zeros();
        let mut g = Vector6::zeros();
        for (i, w) in &self.points {
            let m = &self.corrs.points[*i];
            if view.depth(&m.point) <= 1e-9 {
                // Behind the camera: treat as a saturated residual.
                cost += w * kernel.rho(1e6);
                continue;
            }
            let (r, _, j) = point_pose_jacobian(view, &m.point, &m.pixel);
            let s = r.norm_squared();
            cost += w * kernel.rho(s);
            if normal {
                let wi = w * kernel.d1(s);
                h += j.transpose() * j * wi;
                g += j.transpose() * r * wi;
            }
        }
        for (i, w, chart) in &self.lines {
            let m = &self.corrs.lines[*i];
            for x in [m.segment.start, m.segment.end] {
                let Ok((d, _, j)) = endpoint_pose_jacobian(view, chart, &x) else {
                    cost += w * kernel.rho(1e6);
                    continue;
                };
                let s = d * d;
                cost += w * kernel.rho(s);
                if normal {
                    let wi = w * kernel.d1(s);
                    h += j.transpose() * j * wi;
                    g += j.transpose() * wi * d;
                }
            }
        }
        (cost, h, g)
    }
}

/// Levenberg-Marquardt over the 6-DoF pose on the inliers of `score`,
/// minimizing the weighted robust sum of point reprojection and line
/// endpoint residuals. Returns the input pose unless the result has a
/// score no worse than the input's.
pub fn local_optimize(
    pose: &PoseCandidate<f64>,
    corrs: &HybridCorrSet,
    score: &Score,
    weights: Option<&Weights>,
    cfg: &RansacConfig,
) -> PoseCandidate<f64> {
    let terms = Terms {
        corrs,
        points: score
            .point_inliers
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(|(i, _)| (i, Weights::point(weights, i)))
            .filter(|(_, w)| *w > 0.0)
            .collect(),
        lines: score
            .line_inliers
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(|(i, _)| (i, Weights::line(weights, i)))
            .filter(|(_, w)| *w > 0.0)
            .map(|(i, w)| (i, w, PluckerChart::new(&corrs.lines[i].line.line.to_ortho())))
            .collect(),
    };
    // Six scalar residuals at least.
    if 2 * (terms.points.len() + terms.lines.len()) < 6 {
        return *pose;
    }
    let Ok(mut view) = corrs.view(pose) else { return *pose };
    let mut current = *pose;
    let mut lambda = 1e-4;
    let (mut cost, mut h, mut g) = terms.eval(&view, cfg, true);
    for _ in 0..cfg.lo_iterations {
        let mut a = h;
        for k in 0..6 {
            a[(k, k)] += lambda * a[(k, k)].max(1e-9) + 1e-12;
        }
        let Some(chol) = a.cholesky() else {
            lambda *= 10.0;
            continue;
        };
        let dx = -chol.solve(&g);
        let cand = apply(&current, &dx);
        let Ok(cv) = corrs.view(&cand) else { break };
        let (c, _, _) = terms.eval(&cv, cfg, false);
        if c < cost {
            let converged = (cost - c) <= 1e-14 * (1.0 + cost) || dx.norm() < 1e-14;
            current = cand;
            view = cv;
            lambda = (lambda * 0.1).max(1e-12);
            (cost, h, g) = terms.eval(&view, cfg, true);
            if converged {
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e8 {
                break;
            }
        }
    }
    let before = score.value;
    let after = score_pose(&current, corrs, cfg, weights).value;
    if after <= before {
        current
    } else {
        *pose
    }
}
