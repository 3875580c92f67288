use super::{HybridCorrSet, Weights};
use crate::solvers::PoseCandidate;
use crate::uncertainty::{line_reprojection_sigma, point_reprojection_covariance};

/// Floor on uncertainty weights, so no correspondence is silenced.
pub const MIN_WEIGHT: f64 = 0.05;

fn weight(sigma: f64) -> f64 {
    if sigma.is_finite() {
        (1.0 / (1.0 + sigma.max(0.0))).clamp(MIN_WEIGHT, 1.0)
    } else {
        MIN_WEIGHT
    }
}

/// Weights `1 / (1 + sigma)` from the reprojection uncertainty at `pose`.
/// Points use the square root of the largest eigenvalue of the 2x2
/// projected covariance, lines the larger per-endpoint residual sigma.
/// Missing covariances, or ones that cannot be projected, give weight 1.
pub fn reweight_by_uncertainty(pose: &PoseCandidate<f64>, corrs: &HybridCorrSet) -> Weights {
    let mut w = Weights::ones(corrs);
    let Ok(view) = corrs.view(pose) else { return w };
    for (i, m) in corrs.points.iter().enumerate() {
        if let Some(cov) = &m.covariance {
            if view.depth(&m.point) > 0.0 {
                let c = point_reprojection_covariance(&view, &m.point, cov);
                w.points[i] = weight(c.symmetric_eigenvalues().max().max(0.0).sqrt());
            }
        }
    }
    for (i, m) in corrs.lines.iter().enumerate() {
        let Some(cov) = &m.covariance else { continue };
        let phi = m.line.line.to_ortho();
        let s = [m.segment.start, m.segment.end]
            .iter()
            .map(|x| line_reprojection_sigma(&phi, cov, &view, x))
            .collect::<Result<Vec<f64>, _>>();
        if let Ok(s) = s {
            w.lines[i] = weight(s[0].max(s[1]));
        }
    }
    w
}
