//! Reference implementations used to validate the analytic derivatives and
//! covariances: central finite differences and Monte-Carlo re-estimation.

use nalgebra::{DMatrix, DVector, Vector2, Vector3, Vector4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geom::{triangulate_point_multiview, CameraView, OrthoLine};
use crate::refine::optimize_line;
use crate::residual::LineObservation;
use crate::robust::Kernel;
use super::problems::gaussian2;

/// Central-difference Jacobian of `f` at `x`.
pub fn fd_jacobian<F>(mut f: F, x: &DVector<f64>, step: f64) -> DMatrix<f64>
where
    F: FnMut(&DVector<f64>) -> DVector<f64>,
{
    let f0 = f(x);
    let mut j = DMatrix::zeros(f0.len(), x.len());
    for i in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += step;
        xm[i] -= step;
        let col = (f(&xp) - f(&xm)) / (2.0 * step);
        j.set_column(i, &col);
    }
    j
}

#[derive(Debug, Clone, PartialEq)]
pub struct McEstimate<const N: usize> {
    pub mean: nalgebra::SVector<f64, N>,
    pub covariance: nalgebra::SMatrix<f64, N, N>,
    pub used: usize,
    pub excluded: usize,
}

fn accumulate<const N: usize>(samples: &[nalgebra::SVector<f64, N>], excluded: usize) -> Result<McEstimate<N>> {
    if samples.len() < 2 {
        return Err(Error::NonConvergence);
    }
    let n = samples.len() as f64;
    let mean = samples.iter().fold(nalgebra::SVector::<f64, N>::zeros(), |a, s| a + s) / n;
    let mut cov = nalgebra::SMatrix::<f64, N, N>::zeros();
    for s in samples {
        let d = s - mean;
        cov += d * d.transpose();
    }
    Ok(McEstimate {
        mean,
        covariance: cov / (n - 1.0),
        used: samples.len(),
        excluded,
    })
}

/// Sample covariance of the re-optimized `Phi` under `N(0, sigma^2)`
/// endpoint perturbations, starting every solve from `phi_star`.
/// Samples that do not reach a stationary point are excluded.
pub fn mc_line_covariance(
    phi_star: &OrthoLine<f64>,
    obs: &[LineObservation<f64>],
    kernel: &Kernel<f64>,
    n_samples: usize,
    sigma: f64,
    seed: u64,
) -> Result<McEstimate<4>> {
    if n_samples == 0 {
        return Err(Error::InvalidSpec("n_samples must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(n_samples);
    let mut excluded = 0;
    for _ in 0..n_samples {
        let perturbed: Vec<LineObservation<f64>> = obs
            .iter()
            .map(|o| LineObservation {
                view: o.view,
                start: o.start + gaussian2(&mut rng, sigma),
                end: o.end + gaussian2(&mut rng, sigma),
            })
            .collect();
        match optimize_line(phi_star, &perturbed, kernel, 100, 1e-9) {
            Ok(fit) if fit.gradient_norm < 1e-6 => {
                let p = fit.phi.to_array();
                samples.push(Vector4::new(p[0], p[1], p[2], p[3]));
            }
            _ => excluded += 1,
        }
    }
    accumulate(&samples, excluded)
}

/// Sample covariance of the re-triangulated point under `N(0, sigma^2)`
/// keypoint perturbations.
pub fn mc_point_covariance(
    obs: &[(&CameraView<f64>, Vector2<f64>)],
    n_samples: usize,
    sigma: f64,
    seed: u64,
) -> Result<McEstimate<3>> {
    if n_samples == 0 {
        return Err(Error::InvalidSpec("n_samples must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples: Vec<Vector3<f64>> = Vec::with_capacity(n_samples);
    let mut excluded = 0;
    for _ in 0..n_samples {
        let perturbed: Vec<(&CameraView<f64>, Vector2<f64>)> =
            obs.iter().map(|(v, x)| (*v, x + gaussian2(&mut rng, sigma))).collect();
        match triangulate_point_multiview(&perturbed) {
            Ok(t) => samples.push(t.point),
            Err(_) => excluded += 1,
        }
    }
    accumulate(&samples, excluded)
}

/// Frobenius-relative difference `|a - b| / |b|`.
pub fn relative_frobenius<const N: usize>(a: &nalgebra::SMatrix<f64, N, N>, b: &nalgebra::SMatrix<f64, N, N>) -> f64 {
    (a - b).norm() / b.norm()
}

