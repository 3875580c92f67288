//! Small single-track problems with known ground truth.

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::geom::{CameraView, Intrinsics, Segment3};

/// World-to-camera pose of a camera at `center` looking at `target`.
pub fn look_at(center: &Vector3<f64>, target: &Vector3<f64>, up: &Vector3<f64>) -> Result<(Matrix3<f64>, Vector3<f64>)> {
    let z = (target - center).normalize();
    let x = z.cross(up);
    if x.norm() < 1e-9 {
        return Err(Error::InvalidSpec("viewing direction parallel to up".into()));
    }
    let x = x.normalize();
    let y = z.cross(&x);
    let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
    Ok((r, -(r * center)))
}

pub fn default_intrinsics() -> Intrinsics<f64> {
    Intrinsics::new(500.0, 500.0, 320.0, 240.0)
}

pub const IMAGE_SIZE: (f64, f64) = (640.0, 480.0);

pub fn in_image(x: &Vector2<f64>) -> bool {
    x.x >= 0.0 && x.y >= 0.0 && x.x <= IMAGE_SIZE.0 && x.y <= IMAGE_SIZE.1
}

pub(crate) fn unit_sphere(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        let n: f64 = v.norm();
        if n > 1e-6 {
            return v / n;
        }
    }
}

pub(crate) fn gaussian2(rng: &mut ChaCha8Rng, sigma: f64) -> Vector2<f64> {
    let x: f64 = StandardNormal.sample(rng);
    let y: f64 = StandardNormal.sample(rng);
    Vector2::new(x * sigma, y * sigma)
}

/// One 3D segment seen by several posed views.
#[derive(Debug, Clone)]
pub struct LineProblem {
    pub views: Vec<CameraView<f64>>,
    pub truth: Segment3<f64>,
    /// Noise-free projected endpoints per view.
    pub clean: Vec<(Vector2<f64>, Vector2<f64>)>,
    /// Observed endpoints per view.
    pub observed: Vec<(Vector2<f64>, Vector2<f64>)>,
}

impl LineProblem {
    pub fn observations(&self) -> Vec<crate::residual::LineObservation<'_, f64>> {
        self.views
            .iter()
            .zip(&self.observed)
            .map(|(v, (s, e))| crate::residual::LineObservation {
                view: v,
                start: *s,
                end: *e,
            })
            .collect()
    }
}

/// Segment at distance >= 1 from the origin observed from `n_views` cameras on a sphere of
/// radius 6 to 10, with `baseline_deg` bounding the angular spread of the
/// camera centers about a random mean direction.
pub fn random_line_problem(rng: &mut ChaCha8Rng, n_views: usize, noise_px: f64, baseline_deg: f64) -> LineProblem {
    let k = default_intrinsics();
    loop {
        let dir = unit_sphere(rng);
        // Keep the line away from the world origin, where the moment
        // direction (and with it the chart) is unstable.
        let mid = unit_sphere(rng) * rng.random_range(1.5..2.5);
        if (mid - dir * mid.dot(&dir)).norm() < 1.0 {
            continue;
        }
        let half = rng.random_range(1.0..2.0);
        let (a, b) = (mid + dir * half, mid - dir * half);
        let Ok(truth) = Segment3::from_endpoints(a, b) else { continue };
        let mean_dir = unit_sphere(rng);
        let mut views = Vec::new();
        let mut clean = Vec::new();
        let mut tries = 0;
        while views.len() < n_views && tries < 200 {
            tries += 1;
            let spread = baseline_deg.to_radians() * rng.random_range(0.0..1.0);
            let perp = unit_sphere(rng).cross(&mean_dir).normalize();
            let cdir = crate::geom::so3::axis_angle(&perp, spread) * mean_dir;
            let center = mid + cdir * rng.random_range(6.0..10.0);
            let target = mid + Vector3::new(
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.3..0.3),
            );
            let Ok((r, t)) = look_at(&center, &target, &unit_sphere(rng)) else { continue };
            let view = CameraView::new(views.len() as u32, k, r, t).expect("valid pose");
            // Viewing direction must not be nearly along the line.
            let ray = (mid - center).normalize();
            if ray.dot(&dir).abs() > 0.9 {
                continue;
            }
            let (Ok(pa), Ok(pb)) = (view.project_point(&a), view.project_point(&b)) else { continue };
            if !in_image(&pa) || !in_image(&pb) || (pa - pb).norm() < 60.0 {
                continue;
            }
            views.push(view);
            clean.push((pa, pb));
        }
        if views.len() < n_views {
            continue;
        }
        let observed = clean
            .iter()
            .map(|(s, e)| (s + gaussian2(rng, noise_px), e + gaussian2(rng, noise_px)))
            .collect();
        return LineProblem {
            views,
            truth,
            clean,
            observed,
        };
    }
}

/// An absolute-pose problem: one camera and its 2D-3D correspondences.
#[derive(Debug, Clone)]
pub struct PoseProblem {
    pub truth: CameraView<f64>,
    pub corrs: crate::registration::HybridCorrSet,
    /// Bounding-box diagonal of the 3D structure.
    pub diameter: f64,
    /// Which correspondences were replaced by wrong matches.
    pub point_outliers: Vec<bool>,
    pub line_outliers: Vec<bool>,
}

fn pixel(rng: &mut ChaCha8Rng) -> Vector2<f64> {
    Vector2::new(rng.random_range(10.0..IMAGE_SIZE.0 - 10.0), rng.random_range(10.0..IMAGE_SIZE.1 - 10.0))
}

/// Random camera with `n_points` points and `n_lines` segments at depths
/// 4 to 12 in front of it and `n_vps` vanishing directions. Observations
/// get Gaussian noise; outliers swap in the 3D entity of another
/// correspondence.
pub fn random_pose_problem(
    rng: &mut ChaCha8Rng,
    n_points: usize,
    n_lines: usize,
    n_vps: usize,
    noise_px: f64,
    outlier_rate: f64,
) -> PoseProblem {
    use crate::geom::Segment2;
    let k = default_intrinsics();
    let r = crate::geom::so3::exp(&(unit_sphere(rng) * rng.random_range(0.0..std::f64::consts::PI)));
    let t = unit_sphere(rng) * rng.random_range(0.0..5.0);
    let view = CameraView::new(0, k, r, t).expect("valid pose");
    let back = |x: &Vector2<f64>, z: f64| r.transpose() * (k.normalize(x) * z - t);
    let mut corrs = crate::registration::HybridCorrSet::new(k);
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    let mut grow = |x: &Vector3<f64>| {
        lo = lo.inf(x);
        hi = hi.sup(x);
    };
    for _ in 0..n_points {
        let x = pixel(rng);
        let p = back(&x, rng.random_range(4.0..12.0));
        grow(&p);
        corrs.push_point(x + gaussian2(rng, noise_px), p);
    }
    while corrs.lines.len() < n_lines {
        let (a, b) = (pixel(rng), pixel(rng));
        if (a - b).norm() < 60.0 {
            continue;
        }
        let (pa, pb) = (back(&a, rng.random_range(4.0..12.0)), back(&b, rng.random_range(4.0..12.0)));
        let Ok(seg3) = Segment3::from_endpoints(pa, pb) else { continue };
        let Ok(seg2) = Segment2::new(a + gaussian2(rng, noise_px), b + gaussian2(rng, noise_px)) else { continue };
        grow(&pa);
        grow(&pb);
        corrs.push_line(seg2, seg3);
    }
    for _ in 0..n_vps {
        let d = unit_sphere(rng);
        let sigma = noise_px / k.focal();
        let noisy = (r * d + unit_sphere(rng) * sigma * 0.5).normalize();
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        corrs.push_vp(k.matrix() * noisy * sign, d);
    }
    let n = corrs.points.len();
    let point_outliers: Vec<bool> = (0..n).map(|_| n > 1 && rng.random_bool(outlier_rate)).collect();
    let originals: Vec<Vector3<f64>> = corrs.points.iter().map(|m| m.point).collect();
    for (i, bad) in point_outliers.iter().enumerate() {
        if *bad {
            let j = (i + rng.random_range(1..n)) % n;
            corrs.points[i].point = originals[j];
        }
    }
    let n = corrs.lines.len();
    let line_outliers: Vec<bool> = (0..n).map(|_| n > 1 && rng.random_bool(outlier_rate)).collect();
    let originals: Vec<Segment3<f64>> = corrs.lines.iter().map(|m| m.line).collect();
    for (i, bad) in line_outliers.iter().enumerate() {
        if *bad {
            let j = (i + rng.random_range(1..n)) % n;
            corrs.lines[i].line = originals[j];
        }
    }
    PoseProblem {
        truth: view,
        corrs,
        diameter: if lo.x.is_finite() { (hi - lo).norm() } else { 0.0 },
        point_outliers,
        line_outliers,
    }
}
