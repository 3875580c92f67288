//! Metrics against ground truth: robust similarity alignment, per-view and
//! relative pose errors with AUC, and map precision/recall.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scene::GroundTruth;
use crate::error::{Error, Result};
use crate::geom::{so3, Line3, Segment3};
use crate::model::{Map, View};

/// `x_gt = s R x + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Similarity {
    pub fn identity() -> Self {
        Self { scale: 1.0, rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    /// Same rotation and scale, translation refit to the centroid of `pairs`.
    fn recentered(self, pairs: &[(Vector3<f64>, Vector3<f64>)]) -> Self {
        let n = pairs.len() as f64;
        let ms: Vector3<f64> = pairs.iter().map(|p| p.0).sum::<Vector3<f64>>() / n;
        let md: Vector3<f64> = pairs.iter().map(|p| p.1).sum::<Vector3<f64>>() / n;
        Self { translation: md - self.rotation * ms * self.scale, ..self }
    }

    pub fn apply(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * x * self.scale + self.translation
    }

    /// The view expressed in the target frame.
    pub fn apply_view(&self, v: &View) -> View {
        let rotation = v.rotation * self.rotation.transpose();
        let center = self.apply(&v.center());
        View { rotation, translation: -(rotation * center), ..*v }
    }

    /// Keeps the orientation of the Plucker direction, so the transformed
    /// line sits in the same chart as the original.
    pub fn apply_segment(&self, s: &Segment3<f64>) -> Result<Segment3<f64>> {
        let (start, end) = (self.apply(&s.start), self.apply(&s.end));
        let d = self.rotation * s.line.d;
        let line = Line3 { d, m: start.cross(&d) };
        Segment3::on_line(line, &start, &end)
    }

    /// Applies the transform to every view and track.
    pub fn apply_map(&self, map: &Map) -> Result<Map> {
        let mut out = map.clone();
        for v in out.views.values_mut() {
            *v = self.apply_view(v);
        }
        for t in out.points.values_mut() {
            t.point = self.apply(&t.point);
            t.covariance = t.covariance.map(|c| self.rotation * c * self.rotation.transpose() * (self.scale * self.scale));
        }
        for t in out.lines.values_mut() {
            t.segment = self.apply_segment(&t.segment)?;
            // The chart covariance is not expressed in world coordinates.
            t.covariance = None;
        }
        for t in out.vps.values_mut() {
            t.direction = self.rotation * t.direction;
        }
        Ok(out)
    }
}

/// Least-squares similarity from `src` to `dst` (Umeyama).
pub fn umeyama(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Option<Similarity> {
    let n = src.len();
    if n < 2 || n != dst.len() {
        return None;
    }
    let ms: Vector3<f64> = src.iter().sum::<Vector3<f64>>() / n as f64;
    let md: Vector3<f64> = dst.iter().sum::<Vector3<f64>>() / n as f64;
    let mut cov = Matrix3::zeros();
    let mut var = 0.0;
    for (s, d) in src.iter().zip(dst) {
        cov += (d - md) * (s - ms).transpose();
        var += (s - ms).norm_squared();
    }
    cov /= n as f64;
    var /= n as f64;
    if var < 1e-18 {
        return None;
    }
    let svd = cov.svd(true, true);
    let (u, vt) = (svd.u?, svd.v_t?);
    let mut e = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        e[(2, 2)] = -1.0;
    }
    let rotation = u * e * vt;
    let sv = svd.singular_values;
    let trace = sv[0] * e[(0, 0)] + sv[1] * e[(1, 1)] + sv[2] * e[(2, 2)];
    let scale = trace / var;
    if !(scale > 0.0) {
        return None;
    }
    Some(Similarity { scale, rotation, translation: md - rotation * ms * scale })
}

/// Robust alignment of estimated to true camera centers: RANSAC over
/// triples, inliers within `inlier_dist`, refit on the best consensus.
/// With only two views, the rotation comes from the first view's pose.
pub fn align_views(views: &BTreeMap<u32, View>, gt: &GroundTruth, inlier_dist: f64, seed: u64) -> Result<Similarity> {
    let ids: Vec<u32> = views.keys().copied().filter(|id| (*id as usize) < gt.views.len()).collect();
    let src: Vec<Vector3<f64>> = ids.iter().map(|id| views[id].center()).collect();
    let dst: Vec<Vector3<f64>> = ids.iter().map(|id| gt.view(*id).center()).collect();
    if ids.len() < 2 {
        return Err(Error::AlignmentFailed);
    }
    if ids.len() == 2 {
        let (a, b) = (&views[&ids[0]], gt.view(ids[0]));
        let rotation = b.rotation.transpose() * a.rotation;
        let ds = (src[1] - src[0]).norm();
        if ds < 1e-12 {
            return Err(Error::AlignmentFailed);
        }
        let scale = (dst[1] - dst[0]).norm() / ds;
        return Ok(Similarity { scale, rotation, translation: dst[0] - rotation * src[0] * scale });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inliers_of = |s: &Similarity| -> Vec<usize> {
        (0..src.len()).filter(|&i| (s.apply(&src[i]) - dst[i]).norm() < inlier_dist).collect()
    };
    let mut best: Vec<usize> = Vec::new();
    let trials = 200.min(ids.len() * ids.len() * ids.len());
    for _ in 0..trials {
        let idx = sample(&mut rng, ids.len(), 3).into_vec();
        let s: Vec<_> = idx.iter().map(|&i| src[i]).collect();
        let d: Vec<_> = idx.iter().map(|&i| dst[i]).collect();
        let Some(sim) = umeyama(&s, &d) else { continue };
        let inl = inliers_of(&sim);
        if inl.len() > best.len() {
            best = inl;
        }
    }
    if best.len() < 3 {
        return Err(Error::AlignmentFailed);
    }
    // Refit, then re-collect inliers once.
    let fit = |set: &[usize]| {
        umeyama(&set.iter().map(|&i| src[i]).collect::<Vec<_>>(), &set.iter().map(|&i| dst[i]).collect::<Vec<_>>())
    };
    let sim = fit(&best).ok_or(Error::AlignmentFailed)?;
    let again = inliers_of(&sim);
    let (sim, set) = if again.len() >= best.len() { (fit(&again).ok_or(Error::AlignmentFailed)?, again) } else { (sim, best) };
    // Nearly collinear centers leave the rotation about their common axis
    // to noise; the camera axes of the inliers pin it down.
    let arm = 0.1 * gt.diameter;
    let mut s2 = Vec::with_capacity(4 * set.len());
    let mut d2 = Vec::with_capacity(4 * set.len());
    for &i in &set {
        let (v, g) = (&views[&ids[i]], gt.view(ids[i]));
        s2.push(src[i]);
        d2.push(dst[i]);
        for k in 0..3 {
            s2.push(src[i] + v.rotation.row(k).transpose() * (arm / sim.scale));
            d2.push(dst[i] + g.rotation.row(k).transpose() * arm);
        }
    }
    let with_axes = umeyama(&s2, &d2).ok_or(Error::AlignmentFailed)?;
    Ok(Similarity { scale: sim.scale, ..with_axes }.recentered(&set.iter().map(|&i| (src[i], dst[i])).collect::<Vec<_>>()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewError {
    pub view_id: u32,
    pub rotation_deg: f64,
    pub translation: f64,
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseMetrics {
    pub n_views: usize,
    pub n_registered: usize,
    pub per_view: Vec<ViewError>,
    /// Fraction of all views registered within the thresholds.
    pub valid_fraction: f64,
    pub median_rotation_deg: f64,
    pub rmse_translation: f64,
    /// `(threshold_deg, auc)`.
    pub auc: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseThresholds {
    /// Fraction of the scene diameter.
    pub translation_fraction: f64,
    pub rotation_deg: f64,
}

impl Default for PoseThresholds {
    fn default() -> Self {
        Self { translation_fraction: 0.05, rotation_deg: 5.0 }
    }
}

pub const AUC_THRESHOLDS_DEG: [f64; 4] = [1.0, 3.0, 5.0, 10.0];

pub fn rotation_error_deg(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    so3::angle_between(a, b).to_degrees()
}

/// Relative pose error of a view pair: the larger of the relative
/// rotation error and the angle between relative translation directions.
fn relative_error(ea: &View, eb: &View, ga: &View, gb: &View) -> f64 {
    let r_est = eb.rotation * ea.rotation.transpose();
    let r_gt = gb.rotation * ga.rotation.transpose();
    let t_est = eb.translation - r_est * ea.translation;
    let t_gt = gb.translation - r_gt * ga.translation;
    let rot = rotation_error_deg(&r_est, &r_gt);
    let (ne, ng) = (t_est.norm(), t_gt.norm());
    let trans = if ne < 1e-12 || ng < 1e-12 {
        0.0
    } else {
        (t_est.dot(&t_gt) / (ne * ng)).clamp(-1.0, 1.0).acos().to_degrees()
    };
    rot.max(trans)
}

/// Area under the recall curve of `errors` up to `threshold`, normalized.
pub fn auc(errors: &[f64], threshold: f64) -> f64 {
    if errors.is_empty() {
        return 0.0;
    }
    let mut e: Vec<f64> = errors.to_vec();
    e.sort_by(f64::total_cmp);
    let n = e.len() as f64;
    let mut area = 0.0;
    let mut prev_x = 0.0;
    let mut prev_y = 0.0;
    for (i, &x) in e.iter().enumerate() {
        if x >= threshold {
            break;
        }
        area += (x - prev_x) * prev_y;
        prev_x = x;
        prev_y = (i + 1) as f64 / n;
    }
    area += (threshold - prev_x) * prev_y;
    area / threshold
}

/// Per-view errors after robust alignment, and relative-pose AUC over all
/// view pairs with unregistered pairs scored as 180 degrees.
pub fn evaluate_poses(views: &BTreeMap<u32, View>, gt: &GroundTruth, th: &PoseThresholds) -> Result<PoseMetrics> {
    let tdist = th.translation_fraction * gt.diameter;
    let sim = align_views(views, gt, tdist, 0)?;
    let mut per_view = Vec::new();
    for (id, v) in views {
        let Some(g) = gt.views.get(*id as usize) else { continue };
        let a = sim.apply_view(v);
        let rotation_deg = rotation_error_deg(&a.rotation, &g.rotation);
        let translation = (a.center() - g.center()).norm();
        per_view.push(ViewError {
            view_id: *id,
            rotation_deg,
            translation,
            valid: rotation_deg < th.rotation_deg && translation < tdist,
        });
    }
    let n = gt.views.len();
    let mut rel = Vec::new();
    for i in 0..n as u32 {
        for j in i + 1..n as u32 {
            rel.push(match (views.get(&i), views.get(&j)) {
                (Some(a), Some(b)) => relative_error(a, b, gt.view(i), gt.view(j)),
                _ => 180.0,
            });
        }
    }
    let mut rots: Vec<f64> = per_view.iter().map(|e| e.rotation_deg).collect();
    rots.sort_by(f64::total_cmp);
    let median_rotation_deg = if rots.is_empty() { f64::NAN } else { rots[rots.len() / 2] };
    let rmse_translation = (per_view.iter().map(|e| e.translation * e.translation).sum::<f64>() / per_view.len().max(1) as f64).sqrt();
    Ok(PoseMetrics {
        n_views: n,
        n_registered: per_view.len(),
        valid_fraction: per_view.iter().filter(|e| e.valid).count() as f64 / n as f64,
        median_rotation_deg,
        rmse_translation,
        per_view,
        auc: AUC_THRESHOLDS_DEG.iter().map(|&t| (t, auc(&rel, t))).collect(),
    })
}

/// Distance from `x` to the closed segment `s`.
pub fn point_segment_distance(x: &Vector3<f64>, s: &Segment3<f64>) -> f64 {
    let ab = s.end - s.start;
    let t = ((x - s.start).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
    (s.start + ab * t - x).norm()
}

/// Largest distance of a segment's samples to `gt`.
fn segment_distance(s: &Segment3<f64>, gt: &Segment3<f64>) -> f64 {
    (0..=4)
        .map(|i| point_segment_distance(&(s.start + (s.end - s.start) * (i as f64 / 4.0)), gt))
        .fold(0.0, f64::max)
}

/// Distance of a reconstructed segment to the closest true segment.
pub fn line_track_error(s: &Segment3<f64>, gt: &GroundTruth) -> f64 {
    gt.segments.iter().map(|g| segment_distance(s, g)).fold(f64::INFINITY, f64::min)
}

pub fn point_track_error(x: &Vector3<f64>, gt: &GroundTruth) -> f64 {
    gt.points.iter().map(|p| (p - x).norm()).fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapRow {
    pub epsilon: f64,
    /// Fraction of line tracks within epsilon of a true segment.
    pub line_precision: f64,
    /// Total true length covered within epsilon.
    pub line_recall_length: f64,
    /// Covered length over total true length.
    pub line_recall: f64,
    pub point_precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapMetrics {
    pub n_lines: usize,
    pub n_points: usize,
    pub rows: Vec<MapRow>,
}

/// Precision and length recall of `map` (already in ground-truth frame) at
/// each epsilon, scene units. Only tracks with at least `min_supports`
/// active supports are counted.
pub fn evaluate_map(map: &Map, gt: &GroundTruth, epsilons: &[f64], min_supports: usize) -> MapMetrics {
    let lines: Vec<&Segment3<f64>> = map.lines.values().filter(|t| t.active_count() >= min_supports).map(|t| &t.segment).collect();
    let line_err: Vec<f64> = lines.iter().map(|s| line_track_error(s, gt)).collect();
    let point_err: Vec<f64> = map.points.values().map(|t| point_track_error(&t.point, gt)).collect();
    const SAMPLES: usize = 100;
    // Per true sample, distance to the nearest reconstructed segment.
    let mut sample_dist = Vec::new();
    let mut total = 0.0;
    for g in &gt.segments {
        let len = g.length();
        total += len;
        for i in 0..SAMPLES {
            let x = g.start + (g.end - g.start) * ((i as f64 + 0.5) / SAMPLES as f64);
            let d = lines.iter().map(|s| point_segment_distance(&x, s)).fold(f64::INFINITY, f64::min);
            sample_dist.push((d, len / SAMPLES as f64));
        }
    }
    let frac = |errs: &[f64], e: f64| {
        if errs.is_empty() {
            0.0
        } else {
            errs.iter().filter(|x| **x < e).count() as f64 / errs.len() as f64
        }
    };
    let rows = epsilons
        .iter()
        .map(|&e| {
            let covered: f64 = sample_dist.iter().filter(|(d, _)| *d < e).map(|(_, w)| w).sum();
            MapRow {
                epsilon: e,
                line_precision: frac(&line_err, e),
                line_recall_length: covered,
                line_recall: if total > 0.0 { covered / total } else { 0.0 },
                point_precision: frac(&point_err, e),
            }
        })
        .collect();
    MapMetrics { n_lines: lines.len(), n_points: point_err.len(), rows }
}
