//! Synthetic scenes: ground-truth cameras, points and segments grouped by
//! direction, their noisy renderings and a match graph with injected wrong
//! matches.
//!
//! Randomness is drawn from ChaCha8 with one stream per concern (see
//! [`Stream`]), so changing e.g. the number of points leaves camera poses
//! and line noise untouched.

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::problems::{gaussian2, look_at, unit_sphere};
use crate::error::{Error, Result};
use crate::geom::{CameraView, Intrinsics, Segment2, Segment3};
use crate::mapping::derive_vp_matches;
use crate::model::{FeatureRef, Graph, ImageObservations, MatchGraph, ObservationSet, VpDetection};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// One box with its edges and axis-aligned lines on its faces.
    Box,
    /// Several axis-aligned blocks; exactly three line directions.
    Manhattan,
    /// Segments with random directions inside a cube.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trajectory {
    Orbit,
    Linear,
    /// Nearly coincident centers: two-view line triangulations are unstable.
    SmallBaseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutlierRates {
    pub points: f64,
    pub lines: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub seed: u64,
    pub n_views: usize,
    pub n_points: usize,
    pub n_lines: usize,
    pub layout: Layout,
    pub trajectory: Trajectory,
    pub noise_px: f64,
    pub outlier_rate: OutlierRates,
    pub intrinsics: Intrinsics<f64>,
    pub image_size: (f64, f64),
    /// Keep at most this many keypoints per image.
    pub max_points_per_view: Option<usize>,
    /// Extra segments parallel to the camera motion, whose two-view
    /// triangulations are close to degenerate.
    pub unstable_lines: usize,
    /// Views further apart in the sequence than this are not matched.
    pub match_window: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            n_views: 20,
            n_points: 300,
            n_lines: 120,
            layout: Layout::Manhattan,
            trajectory: Trajectory::Orbit,
            noise_px: 0.0,
            outlier_rate: OutlierRates { points: 0.0, lines: 0.0 },
            intrinsics: Intrinsics::new(500.0, 500.0, 320.0, 240.0),
            image_size: (640.0, 480.0),
            max_points_per_view: None,
            unstable_lines: 0,
            match_window: 6,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let rate_ok = |r: f64| (0.0..=1.0).contains(&r);
        if !rate_ok(self.outlier_rate.points) || !rate_ok(self.outlier_rate.lines) {
            return Err(Error::InvalidSpec("outlier rates must lie in [0, 1]".into()));
        }
        if !(self.noise_px >= 0.0) {
            return Err(Error::InvalidSpec("noise must be non-negative".into()));
        }
        if self.n_views < 2 {
            return Err(Error::InvalidSpec("at least two views are required".into()));
        }
        if self.match_window == 0 {
            return Err(Error::InvalidSpec("match window must be positive".into()));
        }
        Ok(())
    }
}

#[repr(u64)]
#[derive(Clone, Copy)]
pub enum Stream {
    Structure = 1,
    Lines = 2,
    Cameras = 3,
    PointNoise = 4,
    LineNoise = 5,
    VpNoise = 6,
    PointOutliers = 7,
    LineOutliers = 8,
    Subsample = 9,
    Scores = 10,
}

fn stream(seed: u64, s: Stream) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(s as u64);
    r
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageTruth {
    pub view_id: u32,
    pub keypoint_ids: Vec<u32>,
    pub segment_ids: Vec<u32>,
    pub vp_ids: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub views: Vec<CameraView<f64>>,
    pub points: Vec<Vector3<f64>>,
    pub segments: Vec<Segment3<f64>>,
    /// Direction cluster of each segment.
    pub segment_vp: Vec<u32>,
    pub vp_directions: Vec<Vector3<f64>>,
    /// Indices of the segments injected as unstable.
    pub unstable: Vec<u32>,
    pub images: Vec<ImageTruth>,
    /// Diagonal of the bounding box of the camera centers and structure.
    pub diameter: f64,
}

impl GroundTruth {
    pub fn view(&self, id: u32) -> &CameraView<f64> {
        &self.views[id as usize]
    }
}

struct Structure {
    points: Vec<Vector3<f64>>,
    segments: Vec<(Vector3<f64>, Vector3<f64>)>,
    cluster: Vec<u32>,
    directions: Vec<Vector3<f64>>,
    center: Vector3<f64>,
    radius: f64,
}

/// Axis-aligned box given by min and max corners.
type Aabb = (Vector3<f64>, Vector3<f64>);

fn box_face_point(rng: &mut ChaCha8Rng, b: &Aabb) -> Vector3<f64> {
    let axis = rng.random_range(0..3);
    let side = rng.random_bool(0.5);
    let mut p = Vector3::zeros();
    for k in 0..3 {
        p[k] = rng.random_range(b.0[k]..b.1[k]);
    }
    p[axis] = if side { b.1[axis] } else { b.0[axis] };
    p
}

fn box_face_segment(rng: &mut ChaCha8Rng, b: &Aabb) -> (Vector3<f64>, Vector3<f64>, usize) {
    loop {
        let fixed = rng.random_range(0..3);
        let along = (fixed + rng.random_range(1..3)) % 3;
        let p = box_face_point(rng, b);
        let mut a = p;
        a[fixed] = if rng.random_bool(0.5) { b.1[fixed] } else { b.0[fixed] };
        let extent = b.1[along] - b.0[along];
        let len = rng.random_range(0.25..0.8) * extent;
        let start = rng.random_range(b.0[along]..(b.1[along] - len).max(b.0[along] + 1e-3));
        let mut e = a;
        a[along] = start;
        e[along] = start + len;
        if len > 0.4 {
            return (a, e, along);
        }
    }
}

fn box_edges(b: &Aabb) -> Vec<(Vector3<f64>, Vector3<f64>, usize)> {
    let mut out = Vec::new();
    let c = |i: usize, j: usize, k: usize| {
        Vector3::new(
            if i == 0 { b.0.x } else { b.1.x },
            if j == 0 { b.0.y } else { b.1.y },
            if k == 0 { b.0.z } else { b.1.z },
        )
    };
    for p in 0..2 {
        for q in 0..2 {
            out.push((c(0, p, q), c(1, p, q), 0));
            out.push((c(p, 0, q), c(p, 1, q), 1));
            out.push((c(p, q, 0), c(p, q, 1), 2));
        }
    }
    out
}

fn structure(spec: &SceneSpec) -> Structure {
    let mut rng = stream(spec.seed, Stream::Structure);
    let mut lrng = stream(spec.seed, Stream::Lines);
    let axes = vec![Vector3::x(), Vector3::y(), Vector3::z()];
    match spec.layout {
        Layout::Box | Layout::Manhattan => {
            let boxes: Vec<Aabb> = if spec.layout == Layout::Box {
                vec![(Vector3::new(-2.0, -1.5, 0.0), Vector3::new(2.0, 1.5, 2.5))]
            } else {
                let mut v = Vec::new();
                for (cx, cy) in [(-2.5, -2.0), (2.0, -2.5), (-2.0, 2.5), (2.5, 2.0), (0.0, 0.0)] {
                    let w = rng.random_range(1.2..2.2);
                    let d = rng.random_range(1.2..2.2);
                    let h = rng.random_range(1.5..4.0);
                    let (cx, cy): (f64, f64) = (cx, cy);
                    v.push((Vector3::new(cx - w / 2.0, cy - d / 2.0, 0.0), Vector3::new(cx + w / 2.0, cy + d / 2.0, h)));
                }
                v
            };
            let points = (0..spec.n_points)
                .map(|i| box_face_point(&mut rng, &boxes[i % boxes.len()]))
                .collect();
            let mut segments = Vec::new();
            let mut cluster = Vec::new();
            for b in &boxes {
                for (a, e, k) in box_edges(b) {
                    if segments.len() < spec.n_lines {
                        segments.push((a, e));
                        cluster.push(k as u32);
                    }
                }
            }
            let mut i = 0;
            while segments.len() < spec.n_lines {
                let (a, e, k) = box_face_segment(&mut lrng, &boxes[i % boxes.len()]);
                segments.push((a, e));
                cluster.push(k as u32);
                i += 1;
            }
            let lo = boxes.iter().fold(Vector3::repeat(f64::MAX), |m, b| m.inf(&b.0));
            let hi = boxes.iter().fold(Vector3::repeat(f64::MIN), |m, b| m.sup(&b.1));
            Structure {
                points,
                segments,
                cluster,
                directions: axes,
                center: (lo + hi) / 2.0,
                radius: (hi - lo).norm() / 2.0,
            }
        }
        Layout::Random => {
            let points = (0..spec.n_points)
                .map(|_| Vector3::from_fn(|_, _| rng.random_range(-3.0..3.0)) + Vector3::new(0.0, 0.0, 1.5))
                .collect();
            let mut segments = Vec::new();
            let mut directions = Vec::new();
            for _ in 0..spec.n_lines {
                let d = unit_sphere(&mut lrng);
                let m = Vector3::from_fn(|_, _| lrng.random_range(-2.5..2.5)) + Vector3::new(0.0, 0.0, 1.5);
                let h = lrng.random_range(0.4..1.5);
                segments.push((m - d * h, m + d * h));
                directions.push(d);
            }
            Structure {
                points,
                cluster: (0..segments.len() as u32).collect(),
                segments,
                directions,
                center: Vector3::new(0.0, 0.0, 1.5),
                radius: 3.0 * 3f64.sqrt(),
            }
        }
    }
}

fn cameras(spec: &SceneSpec, st: &Structure) -> Result<Vec<CameraView<f64>>> {
    let mut rng = stream(spec.seed, Stream::Cameras);
    let n = spec.n_views;
    let r = st.radius * 2.2 + 4.0;
    let up = Vector3::z();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let s = i as f64 / n as f64;
        let jitter = Vector3::from_fn(|_, _| rng.random_range(-0.2..0.2));
        let (center, target) = match spec.trajectory {
            Trajectory::Orbit => {
                let a = s * std::f64::consts::TAU;
                let h = st.center.z + 2.0 + 1.5 * (3.0 * a).sin();
                (
                    Vector3::new(st.center.x + r * a.cos(), st.center.y + r * a.sin(), h) + jitter,
                    st.center + jitter * 2.0,
                )
            }
            Trajectory::Linear => {
                let x = -r * 0.8 + 1.6 * r * s;
                (Vector3::new(x, st.center.y - r, st.center.z + 2.0) + jitter, st.center + jitter * 2.0)
            }
            Trajectory::SmallBaseline => {
                let x = -0.15 + 0.3 * s;
                (Vector3::new(x, st.center.y - r, st.center.z + 1.0) + jitter * 0.05, st.center + jitter * 2.0)
            }
        };
        let (rot, t) = look_at(&center, &target, &up)?;
        out.push(CameraView::new(i as u32, spec.intrinsics, rot, t)?);
    }
    Ok(out)
}

fn in_image(spec: &SceneSpec, x: &Vector2<f64>) -> bool {
    x.x >= 0.0 && x.y >= 0.0 && x.x <= spec.image_size.0 && x.y <= spec.image_size.1
}

/// Projection of the visible part of segment `(a, b)`, with both endpoints
/// inside the image and in front of the camera, or `None`.
fn visible_part(spec: &SceneSpec, v: &CameraView<f64>, a: &Vector3<f64>, b: &Vector3<f64>) -> Option<(f64, f64)> {
    const N: usize = 64;
    let ok = |s: f64| {
        let p = a + (b - a) * s;
        v.depth(&p) > 0.1 && v.project_point(&p).is_ok_and(|x| in_image(spec, &x))
    };
    let flags: Vec<bool> = (0..=N).map(|i| ok(i as f64 / N as f64)).collect();
    let mut best: Option<(usize, usize)> = None;
    let mut i = 0;
    while i <= N {
        if flags[i] {
            let mut j = i;
            while j < N && flags[j + 1] {
                j += 1;
            }
            if best.is_none_or(|(s, e)| j - i > e - s) {
                best = Some((i, j));
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    let (s, e) = best?;
    (e > s).then(|| (s as f64 / N as f64, e as f64 / N as f64))
}

/// Deterministic scene, rendering and match graph from `spec`.
pub fn generate(spec: &SceneSpec) -> Result<(GroundTruth, ObservationSet)> {
    spec.validate()?;
    let mut st = structure(spec);
    let views = cameras(spec, &st)?;

    // Unstable segments: parallel to the motion between neighboring views
    // and placed between the structure and the cameras.
    let mut lrng = stream(spec.seed, Stream::Lines);
    lrng.set_word_pos(1 << 20);
    let mut unstable = Vec::new();
    for k in 0..spec.unstable_lines {
        let i = (k * 3) % (spec.n_views - 1);
        let (ca, cb) = (views[i].center(), views[i + 1].center());
        let dir = (cb - ca).normalize();
        let mid = ca + (st.center - ca) * lrng.random_range(0.35..0.6)
            + Vector3::from_fn(|_, _| lrng.random_range(-0.5..0.5));
        let h = lrng.random_range(0.5..1.0);
        unstable.push(st.segments.len() as u32);
        st.segments.push((mid - dir * h, mid + dir * h));
        st.directions.push(dir);
        st.cluster.push(st.directions.len() as u32 - 1);
    }

    let mut prng = stream(spec.seed, Stream::PointNoise);
    let mut nrng = stream(spec.seed, Stream::LineNoise);
    let mut vrng = stream(spec.seed, Stream::VpNoise);
    // Keypoint strength is a property of the 3D point, so capped views keep
    // the same strong points and neighbors still share them.
    let mut srng = stream(spec.seed, Stream::Subsample);
    let strength: Vec<f64> = st.points.iter().map(|_| srng.random::<f64>()).collect();
    let mut images = Vec::with_capacity(views.len());
    let mut truths = Vec::with_capacity(views.len());
    for v in &views {
        let mut kp_ids: Vec<u32> = st
            .points
            .iter()
            .enumerate()
            .filter(|(_, p)| v.depth(p) > 0.1 && v.project_point(p).is_ok_and(|x| in_image(spec, &x)))
            .map(|(i, _)| i as u32)
            .collect();
        if let Some(limit) = spec.max_points_per_view {
            kp_ids.sort_by(|a, b| strength[*b as usize].total_cmp(&strength[*a as usize]).then(a.cmp(b)));
            kp_ids.truncate(limit);
            kp_ids.sort_unstable();
        }
        let keypoints = kp_ids
            .iter()
            .map(|&i| v.project_point(&st.points[i as usize]).unwrap() + gaussian2(&mut prng, spec.noise_px))
            .collect();

        let mut seg_ids = Vec::new();
        let mut segments = Vec::new();
        for (i, (a, b)) in st.segments.iter().enumerate() {
            let Some((s0, s1)) = visible_part(spec, v, a, b) else { continue };
            // Detections cover a random 80-100% of the visible part.
            let span = s1 - s0;
            let t0 = s0 + span * nrng.random_range(0.0..0.1);
            let t1 = s1 - span * nrng.random_range(0.0..0.1);
            let pa = v.project_point(&(a + (b - a) * t0)).unwrap();
            let pb = v.project_point(&(a + (b - a) * t1)).unwrap();
            if (pa - pb).norm() < 20.0 {
                continue;
            }
            let Ok(seg) = Segment2::new(pa + gaussian2(&mut nrng, spec.noise_px), pb + gaussian2(&mut nrng, spec.noise_px))
            else {
                continue;
            };
            seg_ids.push(i as u32);
            segments.push(seg);
        }

        let mut vp_ids = Vec::new();
        let mut vps = Vec::new();
        for (c, dir) in st.directions.iter().enumerate() {
            let members: Vec<u32> = seg_ids
                .iter()
                .enumerate()
                .filter(|(_, &g)| st.cluster[g as usize] == c as u32)
                .map(|(f, _)| f as u32)
                .collect();
            if members.len() < 2 {
                continue;
            }
            let sigma = spec.noise_px / spec.intrinsics.focal() / (members.len() as f64).sqrt();
            let dc = (v.rotation * dir + unit_sphere(&mut vrng) * (sigma * vrng.random_range(0.0..1.0))).normalize();
            vp_ids.push(c as u32);
            vps.push(VpDetection {
                direction: spec.intrinsics.matrix() * dc,
                line_ids: members,
            });
        }
        images.push(ImageObservations {
            view_id: v.view_id,
            intrinsics: spec.intrinsics,
            keypoints,
            segments,
            vps,
        });
        truths.push(ImageTruth {
            view_id: v.view_id,
            keypoint_ids: kp_ids,
            segment_ids: seg_ids,
            vp_ids,
        });
    }

    let mut orng_p = stream(spec.seed, Stream::PointOutliers);
    let mut orng_l = stream(spec.seed, Stream::LineOutliers);
    let mut score_rng = stream(spec.seed, Stream::Scores);
    let mut matches = MatchGraph::default();
    for i in 0..views.len() {
        for j in i + 1..views.len().min(i + 1 + spec.match_window) {
            match_pair(&mut matches.points, &truths[i].keypoint_ids, &truths[j].keypoint_ids, i, j, spec.outlier_rate.points, &mut orng_p, &mut score_rng);
            match_pair(&mut matches.lines, &truths[i].segment_ids, &truths[j].segment_ids, i, j, spec.outlier_rate.lines, &mut orng_l, &mut score_rng);
        }
    }
    let obs_tmp = ObservationSet { images, matches };
    let vp_graph = derive_vp_matches(&obs_tmp.images, &obs_tmp.matches.lines);
    let ObservationSet { images, mut matches } = obs_tmp;
    matches.vps = vp_graph;

    let mut lo = Vector3::repeat(f64::MAX);
    let mut hi = Vector3::repeat(f64::MIN);
    for p in views.iter().map(|v| v.center()).chain(st.points.iter().cloned()) {
        lo = lo.inf(&p);
        hi = hi.sup(&p);
    }
    let segments = st
        .segments
        .iter()
        .map(|(a, b)| Segment3::from_endpoints(*a, *b))
        .collect::<Result<Vec<_>>>()?;
    Ok((
        GroundTruth {
            views,
            points: st.points,
            segments,
            segment_vp: st.cluster,
            vp_directions: st.directions,
            unstable,
            images: truths,
            diameter: (hi - lo).norm(),
        },
        ObservationSet { images, matches },
    ))
}

#[allow(clippy::too_many_arguments)]
fn match_pair(
    g: &mut Graph,
    ids_a: &[u32],
    ids_b: &[u32],
    va: usize,
    vb: usize,
    outlier_rate: f64,
    rng: &mut ChaCha8Rng,
    score_rng: &mut ChaCha8Rng,
) {
    for (fa, ta) in ids_a.iter().enumerate() {
        let Some(fb) = ids_b.iter().position(|tb| tb == ta) else { continue };
        let mut fb = fb;
        if ids_b.len() > 1 && rng.random_bool(outlier_rate) {
            // Wrong partner, uniformly among the other features.
            let mut wrong = rng.random_range(0..ids_b.len() - 1);
            if wrong >= fb {
                wrong += 1;
            }
            fb = wrong;
        }
        let score = score_rng.random_range(0.5..1.0);
        g.add(FeatureRef::new(va as u32, fa as u32), FeatureRef::new(vb as u32, fb as u32), score);
    }
}
