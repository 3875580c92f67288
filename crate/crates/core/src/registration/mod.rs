//! Absolute pose of a new image from 2D-3D point, line and vanishing-point
//! correspondences: hybrid RANSAC over six minimal solvers, MSAC scoring on
//! points and line endpoints, local optimization and optional reweighting
//! by reprojection uncertainty.

mod corrs;
mod optimize;
mod weights;

use nalgebra::{Matrix3, Matrix4, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use corrs::{collect_correspondences, CorrespondenceOptions};
pub use optimize::local_optimize;
pub use weights::{reweight_by_uncertainty, MIN_WEIGHT};

use crate::error::{Error, Result};
use crate::geom::{Intrinsics, Segment2, Segment3};
use crate::model::{TrackId, View};
use crate::residual::line_residual;
use crate::robust::Kernel;
use crate::solvers::{
    solve_p1p2ll, solve_p2p1ll, solve_p3ll, solve_p3p, solve_vp_1pt_1line, solve_vp_2pt, LineCorr, PointCorr, PoseCandidate,
    VpCorr,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointMatch {
    pub pixel: Vector2<f64>,
    pub point: Vector3<f64>,
    pub covariance: Option<Matrix3<f64>>,
    pub track: Option<TrackId>,
    pub feature: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineMatch {
    pub segment: Segment2<f64>,
    pub line: Segment3<f64>,
    /// Covariance of the orthonormal parameters of `line.line`.
    pub covariance: Option<Matrix4<f64>>,
    pub track: Option<TrackId>,
    pub feature: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VpMatch {
    /// Homogeneous pixel direction.
    pub direction: Vector3<f64>,
    pub v3d: Vector3<f64>,
    pub track: Option<TrackId>,
    pub feature: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridCorrSet {
    pub intrinsics: Intrinsics<f64>,
    pub points: Vec<PointMatch>,
    pub lines: Vec<LineMatch>,
    pub vps: Vec<VpMatch>,
}

impl HybridCorrSet {
    pub fn new(intrinsics: Intrinsics<f64>) -> Self {
        Self {
            intrinsics,
            points: vec![],
            lines: vec![],
            vps: vec![],
        }
    }

    pub fn push_point(&mut self, pixel: Vector2<f64>, point: Vector3<f64>) {
        self.points.push(PointMatch {
            pixel,
            point,
            covariance: None,
            track: None,
            feature: None,
        });
    }

    pub fn push_line(&mut self, segment: Segment2<f64>, line: Segment3<f64>) {
        self.lines.push(LineMatch {
            segment,
            line,
            covariance: None,
            track: None,
            feature: None,
        });
    }

    pub fn push_vp(&mut self, direction: Vector3<f64>, v3d: Vector3<f64>) {
        self.vps.push(VpMatch {
            direction,
            v3d,
            track: None,
            feature: None,
        });
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty() && self.lines.is_empty() && self.vps.is_empty()
    }

    /// A view at `pose` with this set's intrinsics; fails on a non-rotation.
    pub fn view(&self, pose: &PoseCandidate<f64>) -> Result<View> {
        View::new(0, self.intrinsics, pose.rotation, pose.translation)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    P3p,
    P2p1ll,
    P1p2ll,
    P3ll,
    Vp2pt,
    Vp1pt1line,
}

impl SolverKind {
    pub const ALL: [SolverKind; 6] = [
        SolverKind::P3p,
        SolverKind::P2p1ll,
        SolverKind::P1p2ll,
        SolverKind::P3ll,
        SolverKind::Vp2pt,
        SolverKind::Vp1pt1line,
    ];

    /// Sample cardinality as (points, lines, vps).
    pub fn sample_size(self) -> [usize; 3] {
        match self {
            SolverKind::P3p => [3, 0, 0],
            SolverKind::P2p1ll => [2, 1, 0],
            SolverKind::P1p2ll => [1, 2, 0],
            SolverKind::P3ll => [0, 3, 0],
            SolverKind::Vp2pt => [2, 0, 1],
            SolverKind::Vp1pt1line => [1, 1, 1],
        }
    }

    pub fn feasible(self, counts: [usize; 3]) -> bool {
        self.sample_size().iter().zip(counts).all(|(k, n)| *k <= n)
    }

    /// Probability that a sample is all-inlier, `prod_c eps_c^{n_c}`.
    pub fn success_probability(self, ratios: [f64; 3]) -> f64 {
        self.sample_size()
            .iter()
            .zip(ratios)
            .map(|(k, e)| e.powi(*k as i32))
            .product()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacConfig {
    pub max_iterations: usize,
    /// Inlier gate for point reprojection and line endpoint distances.
    pub inlier_threshold_px: f64,
    /// Angular gate for counting VP inliers (VPs do not enter the score).
    pub vp_threshold_deg: f64,
    pub confidence: f64,
    pub min_point_inliers: usize,
    pub min_line_inliers: usize,
    pub min_total_inliers: usize,
    pub seed: u64,
    pub local_optimization: bool,
    pub lo_iterations: usize,
    pub kernel: Kernel<f64>,
    /// Run an uncertainty-free warm start and reweight by reprojection
    /// uncertainty before the main run.
    pub uncertainty_reweighting: bool,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            max_iterations: 10_000,
            inlier_threshold_px: 3.0,
            vp_threshold_deg: 3.0,
            confidence: 0.9999,
            min_point_inliers: 15,
            min_line_inliers: 6,
            min_total_inliers: 30,
            seed: 0,
            local_optimization: true,
            lo_iterations: 30,
            kernel: Kernel::default(),
            uncertainty_reweighting: true,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.inlier_threshold_px > 0.0
            && self.vp_threshold_deg > 0.0
            && self.confidence > 0.0
            && self.confidence < 1.0
            && self.max_iterations > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidSpec("ransac thresholds must be positive and confidence in (0, 1)".into()))
        }
    }

    /// Iteration budget of the uncertainty-free warm start.
    pub fn warm_start_iterations(&self) -> usize {
        (self.max_iterations / 4).min(500).max(1)
    }
}

/// Per-correspondence multipliers on the score contributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub points: Vec<f64>,
    pub lines: Vec<f64>,
}

impl Weights {
    pub fn ones(corrs: &HybridCorrSet) -> Self {
        Self {
            points: vec![1.0; corrs.points.len()],
            lines: vec![1.0; corrs.lines.len()],
        }
    }

    fn point(w: Option<&Self>, i: usize) -> f64 {
        w.map_or(1.0, |w| w.points[i])
    }

    fn line(w: Option<&Self>, i: usize) -> f64 {
        w.map_or(1.0, |w| w.lines[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Score {
    /// Truncated quadratic cost; lower is better.
    pub value: f64,
    pub point_inliers: Vec<bool>,
    pub line_inliers: Vec<bool>,
    pub vp_inliers: Vec<bool>,
}

impl Score {
    pub fn counts(&self) -> [usize; 3] {
        let c = |v: &[bool]| v.iter().filter(|x| **x).count();
        [c(&self.point_inliers), c(&self.line_inliers), c(&self.vp_inliers)]
    }
}

/// Reprojection error of a point correspondence; infinite behind the camera.
pub fn point_error(view: &View, m: &PointMatch) -> f64 {
    view.project_point(&m.point).map_or(f64::INFINITY, |x| (x - m.pixel).norm())
}

/// Larger of the two endpoint distances to the projected 3D line; infinite
/// when the segment midpoint is behind the camera.
pub fn line_error(view: &View, m: &LineMatch) -> f64 {
    if view.depth(&m.line.midpoint()) <= 0.0 {
        return f64::INFINITY;
    }
    match line_residual(view, &m.line.line, &m.segment.start, &m.segment.end) {
        Ok(r) => r.x.abs().max(r.y.abs()),
        Err(_) => f64::INFINITY,
    }
}

/// Undirected angle between the predicted and observed VP, degrees.
pub fn vp_error_deg(view: &View, m: &VpMatch) -> f64 {
    let pred = view.rotation * m.v3d.normalize();
    let obs = (view.intrinsics.inverse_matrix() * m.direction).normalize();
    pred.dot(&obs).abs().min(1.0).acos().to_degrees()
}

/// MSAC score `sum w * min(e^2, tau^2)` over points and lines.
pub fn score_pose(pose: &PoseCandidate<f64>, corrs: &HybridCorrSet, cfg: &RansacConfig, weights: Option<&Weights>) -> Score {
    let tau = cfg.inlier_threshold_px;
    let tau2 = tau * tau;
    let Ok(view) = corrs.view(pose) else {
        return Score {
            value: f64::INFINITY,
            point_inliers: vec![false; corrs.points.len()],
            line_inliers: vec![false; corrs.lines.len()],
            vp_inliers: vec![false; corrs.vps.len()],
        };
    };
    let mut value = 0.0;
    let mut point_inliers = Vec::with_capacity(corrs.points.len());
    for (i, m) in corrs.points.iter().enumerate() {
        let e = point_error(&view, m);
        value += Weights::point(weights, i) * (e * e).min(tau2);
        point_inliers.push(e < tau);
    }
    let mut line_inliers = Vec::with_capacity(corrs.lines.len());
    for (i, m) in corrs.lines.iter().enumerate() {
        let e = line_error(&view, m);
        value += Weights::line(weights, i) * (e * e).min(tau2);
        line_inliers.push(e < tau);
    }
    let vp_inliers = corrs.vps.iter().map(|m| vp_error_deg(&view, m) < cfg.vp_threshold_deg).collect();
    Score {
        value,
        point_inliers,
        line_inliers,
        vp_inliers,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverStats {
    pub solver: SolverKind,
    pub samples: usize,
    /// Samples for which the solver returned at least one pose.
    pub solved: usize,
    /// Times a pose from this solver became the best so far.
    pub improvements: usize,
    /// Final all-inlier probability estimate.
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationResult {
    pub pose: PoseCandidate<f64>,
    pub score: Score,
    pub iterations: usize,
    pub solvers: Vec<SolverStats>,
    pub success: bool,
}

impl RegistrationResult {
    pub fn inlier_counts(&self) -> [usize; 3] {
        self.score.counts()
    }
}

/// `min_point_inliers` points, or `min_line_inliers` lines together with
/// `min_total_inliers` points and lines.
pub fn is_successful(counts: [usize; 3], cfg: &RansacConfig) -> bool {
    let [p, l, _] = counts;
    p >= cfg.min_point_inliers || (l >= cfg.min_line_inliers && p + l >= cfg.min_total_inliers)
}

struct SolverForms {
    points: Vec<PointCorr<f64>>,
    lines: Vec<LineCorr<f64>>,
    vps: Vec<VpCorr<f64>>,
}

impl SolverForms {
    fn new(c: &HybridCorrSet) -> Self {
        let k = &c.intrinsics;
        Self {
            points: c.points.iter().map(|m| PointCorr::from_pixel(k, &m.pixel, m.point)).collect(),
            lines: c
                .lines
                .iter()
                .map(|m| LineCorr::from_pixel_line(k, &m.segment.homogeneous(), &m.line))
                .collect(),
            vps: c.vps.iter().map(|m| VpCorr::from_pixel(k, &m.direction, m.v3d)).collect(),
        }
    }

    fn solve(&self, s: SolverKind, p: &[usize], l: &[usize], v: &[usize]) -> Vec<PoseCandidate<f64>> {
        let pc = |i: usize| self.points[p[i]];
        let lc = |i: usize| self.lines[l[i]];
        let out = match s {
            SolverKind::P3p => solve_p3p(&[pc(0), pc(1), pc(2)]),
            SolverKind::P2p1ll => solve_p2p1ll(&[pc(0), pc(1)], &lc(0)),
            SolverKind::P1p2ll => solve_p1p2ll(&pc(0), &[lc(0), lc(1)]),
            SolverKind::P3ll => solve_p3ll(&[lc(0), lc(1), lc(2)]),
            SolverKind::Vp2pt | SolverKind::Vp1pt1line => {
                // The image VP fixes the world direction only up to sign.
                let vp = self.vps[v[0]];
                let mut all = vec![];
                for vp in [vp, vp.flipped()] {
                    let r = match s {
                        SolverKind::Vp2pt => solve_vp_2pt(&vp, &[pc(0), pc(1)]),
                        _ => solve_vp_1pt_1line(&vp, &pc(0), &lc(0)),
                    };
                    all.extend(r.unwrap_or_default());
                }
                Ok(all)
            }
        };
        out.unwrap_or_default()
    }
}

fn draw(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    if k == 0 {
        return vec![];
    }
    rand::seq::index::sample(rng, n, k).into_vec()
}

/// Unweighted hybrid RANSAC.
pub fn hybrid_ransac(corrs: &HybridCorrSet, cfg: &RansacConfig) -> Result<RegistrationResult> {
    hybrid_ransac_weighted(corrs, cfg, None)
}

/// Hybrid RANSAC: each iteration picks a feasible solver with probability
/// proportional to its all-inlier probability under the current best
/// inlier ratios (uniform before the first model), solves a minimal
/// sample, scores every candidate and locally optimizes each new best.
/// Stops once `prod_s (1 - p_s)^{k_s} <= 1 - confidence`, where `k_s`
/// counts the samples drawn for solver `s`.
pub fn hybrid_ransac_weighted(
    corrs: &HybridCorrSet,
    cfg: &RansacConfig,
    weights: Option<&Weights>,
) -> Result<RegistrationResult> {
    cfg.validate()?;
    let counts = [corrs.points.len(), corrs.lines.len(), corrs.vps.len()];
    let feasible: Vec<SolverKind> = SolverKind::ALL.into_iter().filter(|s| s.feasible(counts)).collect();
    if feasible.is_empty() {
        return Err(Error::NotEnoughCorrespondences);
    }
    if let Some(w) = weights {
        if w.points.len() != counts[0] || w.lines.len() != counts[1] {
            return Err(Error::InvalidSpec("weights do not match correspondences".into()));
        }
    }
    let forms = SolverForms::new(corrs);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut stats: Vec<SolverStats> = feasible
        .iter()
        .map(|s| SolverStats {
            solver: *s,
            samples: 0,
            solved: 0,
            improvements: 0,
            probability: 0.0,
        })
        .collect();
    let mut best: Option<(PoseCandidate<f64>, Score)> = None;
    let log_target = (1.0 - cfg.confidence).ln();
    let mut iterations = 0;

    while iterations < cfg.max_iterations {
        iterations += 1;
        let probs: Vec<f64> = stats.iter().map(|s| s.probability).collect();
        let total: f64 = probs.iter().sum();
        let pick = if best.is_none() || total <= 0.0 {
            rng.random_range(0..feasible.len())
        } else {
            let mut u = rng.random::<f64>() * total;
            let mut k = probs.len() - 1;
            for (i, p) in probs.iter().enumerate() {
                if u < *p {
                    k = i;
                    break;
                }
                u -= p;
            }
            k
        };
        let solver = feasible[pick];
        let [np, nl, nv] = solver.sample_size();
        let ip = draw(&mut rng, counts[0], np);
        let il = draw(&mut rng, counts[1], nl);
        let iv = draw(&mut rng, counts[2], nv);
        stats[pick].samples += 1;
        let poses = forms.solve(solver, &ip, &il, &iv);
        if !poses.is_empty() {
            stats[pick].solved += 1;
        }
        for pose in poses {
            let score = score_pose(&pose, corrs, cfg, weights);
            if best.as_ref().is_some_and(|(_, b)| score.value >= b.value) {
                continue;
            }
            let (pose, score) = if cfg.local_optimization {
                let p = local_optimize(&pose, corrs, &score, weights, cfg);
                let s = score_pose(&p, corrs, cfg, weights);
                if s.value <= score.value {
                    (p, s)
                } else {
                    (pose, score)
                }
            } else {
                (pose, score)
            };
            stats[pick].improvements += 1;
            let c = score.counts();
            let ratios = [0, 1, 2].map(|i| if counts[i] == 0 { 0.0 } else { c[i] as f64 / counts[i] as f64 });
            for s in &mut stats {
                s.probability = s.solver.success_probability(ratios);
            }
            best = Some((pose, score));
        }
        if best.is_some() {
            let log_fail: f64 = stats
                .iter()
                .map(|s| s.samples as f64 * (1.0 - s.probability.min(1.0)).ln())
                .sum();
            if log_fail <= log_target {
                break;
            }
        }
    }

    Ok(match best {
        Some((pose, score)) => {
            let success = is_successful(score.counts(), cfg);
            RegistrationResult {
                pose,
                score,
                iterations,
                solvers: stats,
                success,
            }
        }
        None => RegistrationResult {
            pose: PoseCandidate::identity(),
            score: score_pose(&PoseCandidate::identity(), corrs, cfg, weights),
            iterations,
            solvers: stats,
            success: false,
        },
    })
}

/// Full registration: plain hybrid RANSAC, or with reweighting enabled, a
/// short uncertainty-free warm start whose pose sets the weights of the
/// main run.
pub fn register(corrs: &HybridCorrSet, cfg: &RansacConfig) -> Result<RegistrationResult> {
    if !cfg.uncertainty_reweighting {
        return hybrid_ransac(corrs, cfg);
    }
    let warm_cfg = RansacConfig {
        max_iterations: cfg.warm_start_iterations(),
        ..cfg.clone()
    };
    let warm = hybrid_ransac(corrs, &warm_cfg)?;
    if !warm.score.value.is_finite() {
        return hybrid_ransac(corrs, cfg);
    }
    let w = reweight_by_uncertainty(&warm.pose, corrs);
    hybrid_ransac_weighted(corrs, cfg, Some(&w))
}
