//! Random camera frames and minimal samples shared by the solver tests.
#![allow(dead_code)]

use hsfm::geom::so3;
use hsfm::solvers::*;
use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Frame {
    pub r: Matrix3<f64>,
    pub t: Vector3<f64>,
}

impl Frame {
    pub fn random(rng: &mut ChaCha8Rng) -> Self {
        let axis = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let r = so3::axis_angle(&axis, rng.random_range(0.0..3.1));
        let c = Vector3::new(
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
        );
        Self { t: -(r * c), r }
    }

    pub fn world_point(&self, rng: &mut ChaCha8Rng) -> Vector3<f64> {
        let xc = Vector3::new(
            rng.random_range(-0.6..0.6),
            rng.random_range(-0.45..0.45),
            1.0,
        ) * rng.random_range(2.0..10.0);
        self.r.transpose() * (xc - self.t)
    }

    pub fn point(&self, rng: &mut ChaCha8Rng) -> PointCorr<f64> {
        let x = self.world_point(rng);
        PointCorr::new(self.r * x + self.t, x)
    }

    pub fn line(&self, rng: &mut ChaCha8Rng) -> LineCorr<f64> {
        let a = self.world_point(rng);
        let b = self.world_point(rng);
        let n = (self.r * a + self.t).cross(&(self.r * b + self.t));
        LineCorr::new(n, a, b - a)
    }

    pub fn line_along(&self, rng: &mut ChaCha8Rng, dir: &Vector3<f64>) -> LineCorr<f64> {
        let a = self.world_point(rng);
        let b = a + dir * rng.random_range(1.0..3.0);
        let n = (self.r * a + self.t).cross(&(self.r * b + self.t));
        LineCorr::new(n, a, *dir)
    }

    pub fn vp(&self, rng: &mut ChaCha8Rng) -> VpCorr<f64> {
        let v = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        )
        .normalize();
        VpCorr::new(self.r * v, v)
    }

    pub fn recovered(&self, poses: &[PoseCandidate<f64>]) -> bool {
        poses.iter().any(|p| {
            so3::angle_between(&p.rotation, &self.r) < 1e-6 && (p.translation - self.t).norm() < 1e-6
        })
    }
}


/// Draws frames until 1000 non-degenerate samples, checking every
/// returned rotation; returns (recovered, total).
pub fn rate<F>(seed: u64, mut trial: F) -> (usize, usize)
where
    F: FnMut(&mut ChaCha8Rng, &Frame) -> Option<Vec<PoseCandidate<f64>>>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut ok, mut total) = (0, 0);
    while total < 1000 {
        let frame = Frame::random(&mut rng);
        match trial(&mut rng, &frame) {
            None => continue,
            Some(poses) => {
                total += 1;
                for p in &poses {
                    assert!((p.rotation.transpose() * p.rotation - Matrix3::identity()).norm() < 1e-9);
                    assert!((p.rotation.determinant() - 1.0).abs() < 1e-9);
                }
                if frame.recovered(&poses) {
                    ok += 1;
                }
            }
        }
    }
    (ok, total)
}

pub fn keep(r: hsfm::Result<Vec<PoseCandidate<f64>>>) -> Option<Vec<PoseCandidate<f64>>> {
    match r {
        Ok(p) => Some(p),
        Err(hsfm::Error::DegenerateSample) => None,
        Err(_) => Some(vec![]),
    }
}
