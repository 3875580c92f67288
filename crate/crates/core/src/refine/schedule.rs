//! Active-label maintenance, reliability classification and the two-step
//! refinement schedule (joint BA on reliable tracks, then fixed-pose
//! refinement of the rest).

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::ba::{bundle_adjust, BaOptions, BaProblem, BaReport};
use super::line::optimize_line;
use super::track::{
    keypoint_of, line_observations, point_observations, recompute_endpoints, refine_line_track, refine_point_track,
    refine_vp_track, segment_of, vp_world_direction,
};
use crate::error::{Error, Result};
use crate::geom::{angle_to_line, max_endpoint_distance, Line3, OrthoLine};
use crate::residual::{line_cost_derivatives, LineObservation};
use crate::mapping::vps::direction_angle;
use crate::model::{Map, ObservationSet, Support, TrackId, View};
use crate::robust::Kernel;
use crate::uncertainty::{line_covariance, point_covariance, scale_invariant_sigma, STATIONARITY_TOL};

/// Inactive supports are deleted only from tracks with more active
/// supports than this.
pub const STABLE_MIN_ACTIVE: usize = 10;
/// Gradient norm a line is polished to before its covariance is taken.
pub const POLISH_TOL: f64 = STATIONARITY_TOL * 0.1;
/// VP tracks enter refinement with at least this many active supports.
pub const VP_MIN_ACTIVE: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    pub cauchy_param: f64,
    /// Gate for a support to be active, pixels.
    pub active_threshold_px: f64,
    pub tau_a_deg: f64,
    pub vp_gate_deg: f64,
    pub stable_min_active: usize,
    pub reliable_min_active_lines: usize,
    pub reliable_min_active_points: usize,
    pub reliable_max_sigma_px: f64,
    pub reliable_max_sigma_px_points: f64,
    pub vp_min_active: usize,
    pub max_lm_iterations: usize,
    pub track_iterations: usize,
    pub local_window: usize,
    /// Keep inactive supports on unstable tracks; when off, every outlier
    /// support is deleted immediately.
    pub cache_inactive_supports: bool,
    /// Exclude unreliable tracks from the joint solve; when off, every
    /// track enters one joint BA.
    pub two_step: bool,
    pub point_kernel: Kernel<f64>,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            cauchy_param: crate::robust::CAUCHY_PARAM,
            active_threshold_px: 3.0,
            tau_a_deg: crate::mapping::TAU_A_DEG,
            vp_gate_deg: crate::mapping::VP_GATE_DEG,
            stable_min_active: STABLE_MIN_ACTIVE,
            reliable_min_active_lines: 4,
            reliable_min_active_points: 2,
            reliable_max_sigma_px: 5.0,
            reliable_max_sigma_px_points: 5.0,
            vp_min_active: VP_MIN_ACTIVE,
            max_lm_iterations: 30,
            track_iterations: 30,
            local_window: 5,
            cache_inactive_supports: true,
            two_step: true,
            point_kernel: Kernel::Cauchy(1.0),
        }
    }
}

impl RefineConfig {
    pub fn line_kernel(&self) -> Kernel<f64> {
        Kernel::Cauchy(self.cauchy_param)
    }

    pub fn ba_options(&self) -> BaOptions {
        BaOptions {
            line_kernel: self.line_kernel(),
            point_kernel: self.point_kernel,
            vp_kernel: self.line_kernel(),
            max_iterations: self.max_lm_iterations,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub active: usize,
    pub inactive: usize,
    pub deleted: usize,
}

fn line_support_ok(view: &View, line: &crate::geom::Line3<f64>, seg: &crate::geom::Segment2<f64>, cfg: &RefineConfig) -> bool {
    let Ok(l) = view.project_line(line) else { return false };
    max_endpoint_distance(seg, &l).is_ok_and(|d| d < cfg.active_threshold_px) && angle_to_line(seg, &l) < cfg.tau_a_deg
}

fn point_support_ok(view: &View, x: &nalgebra::Vector3<f64>, obs: &nalgebra::Vector2<f64>, cfg: &RefineConfig) -> bool {
    view.depth(x) > 0.0 && view.project_point(x).is_ok_and(|p| (p - obs).norm() < cfg.active_threshold_px)
}

/// Applies `ok` to each support's label, then drops inactive supports
/// unless caching is on and the track is not yet stable.
pub fn relabel(supports: &mut Vec<Support>, cfg: &RefineConfig, counts: &mut LabelCounts, ok: impl Fn(&Support) -> Option<bool>) {
    for s in supports.iter_mut() {
        if let Some(a) = ok(s) {
            s.active = a;
        }
    }
    let active = supports.iter().filter(|s| s.active).count();
    if !cfg.cache_inactive_supports || active > cfg.stable_min_active {
        let before = supports.len();
        supports.retain(|s| s.active);
        counts.deleted += before - supports.len();
    }
    counts.active += supports.iter().filter(|s| s.active).count();
    counts.inactive += supports.iter().filter(|s| !s.active).count();
}

/// Sets every support's label from the current geometry; supports in
/// unregistered views keep theirs. Tracks left with no support are removed.
pub fn update_active_labels(map: &mut Map, obs: &ObservationSet, cfg: &RefineConfig, tracks: Option<&TrackSet>) -> LabelCounts {
    let mut counts = LabelCounts::default();
    let views = &map.views;
    for (id, t) in map.lines.iter_mut() {
        if tracks.is_some_and(|s| !s.lines.contains(id)) {
            continue;
        }
        let line = t.segment.line;
        relabel(&mut t.supports, cfg, &mut counts, |s| {
            Some(line_support_ok(views.get(&s.view_id)?, &line, segment_of(obs, s)?, cfg))
        });
    }
    for (id, t) in map.points.iter_mut() {
        if tracks.is_some_and(|s| !s.points.contains(id)) {
            continue;
        }
        let x = t.point;
        relabel(&mut t.supports, cfg, &mut counts, |s| {
            Some(point_support_ok(views.get(&s.view_id)?, &x, &keypoint_of(obs, s)?, cfg))
        });
    }
    for (id, t) in map.vps.iter_mut() {
        if tracks.is_some_and(|s| !s.vps.contains(id)) {
            continue;
        }
        let d = t.direction;
        relabel(&mut t.supports, cfg, &mut counts, |s| {
            Some(direction_angle(&vp_world_direction(obs, views, s)?, &d) < cfg.vp_gate_deg)
        });
    }
    map.lines.retain(|_, t| !t.supports.is_empty());
    map.points.retain(|_, t| !t.supports.is_empty());
    map.vps.retain(|_, t| !t.supports.is_empty());
    counts
}

/// Polishes a line to stationarity with fixed poses and computes its
/// covariance and pixel-scale uncertainty.
pub fn line_uncertainty(
    track: &mut crate::model::LineTrack,
    views: &BTreeMap<u32, View>,
    obs: &ObservationSet,
    kernel: &Kernel<f64>,
) -> Result<()> {
    track.covariance = None;
    track.sigma_px = None;
    let o = line_observations(track, views, obs);
    if o.len() < 2 {
        return Err(Error::MissingCovariance);
    }
    let fit = optimize_line(&track.segment.line.to_ortho(), &o, kernel, 100, POLISH_TOL)?;
    if fit.cost <= fit.initial_cost {
        let line = fit.phi.to_plucker()?;
        track.segment = crate::geom::Segment3::on_line(line, &track.segment.start, &track.segment.end)?;
    }
    newton_finish(track, views, obs, kernel)?;
    line_uncertainty_in_place(track, views, obs, kernel)
}

/// Newton decrement of the robust line cost at the track's current line.
fn decrement(track: &crate::model::LineTrack, views: &BTreeMap<u32, View>, obs: &ObservationSet, kernel: &Kernel<f64>) -> Result<(f64, nalgebra::Vector4<f64>)> {
    let o = line_observations(track, views, obs);
    let (_, g, h, _) = line_cost_derivatives(&track.segment.line.to_ortho(), &o, kernel)?;
    let step = h.full_piv_lu().solve(&g).ok_or(Error::SingularSystem)?;
    Ok((g.dot(&step).abs().sqrt(), step))
}

/// Undamped Newton steps after the damped polish. The remaining
/// non-stationarity leaks into the propagated covariance through the
/// curvature of the chart, and differs between frames; these steps take
/// it down to the rounding floor. A step is kept only if the decrement
/// falls.
fn newton_finish(track: &mut crate::model::LineTrack, views: &BTreeMap<u32, View>, obs: &ObservationSet, kernel: &Kernel<f64>) -> Result<()> {
    let (mut dec, mut step) = decrement(track, views, obs, kernel)?;
    for _ in 0..3 {
        let phi = track.segment.line.to_ortho();
        let next = OrthoLine::new(phi.theta - step.fixed_rows::<3>(0), phi.rho - step[3]);
        let mut cand = track.clone();
        cand.segment = crate::geom::Segment3::on_line(next.to_plucker()?, &track.segment.start, &track.segment.end)?;
        let Ok((d, s)) = decrement(&cand, views, obs, kernel) else { break };
        if d >= dec {
            break;
        }
        (*track, dec, step) = (cand, d, s);
    }
    Ok(())
}

/// Covariance and pixel-scale uncertainty at the current geometry, which
/// must already be stationary.
pub fn line_uncertainty_in_place(
    track: &mut crate::model::LineTrack,
    views: &BTreeMap<u32, View>,
    obs: &ObservationSet,
    kernel: &Kernel<f64>,
) -> Result<()> {
    track.covariance = None;
    track.sigma_px = None;
    let o = line_observations(track, views, obs);
    if o.len() < 2 {
        return Err(Error::MissingCovariance);
    }
    let seg = &track.segment;
    let cov = line_covariance(&seg.line.to_ortho(), &o, kernel, &[seg.start, seg.end])?;
    // sigma_px is evaluated in a local frame: unit length is the mean
    // camera distance L to the line, the origin sits L/2 off the line
    // towards the cameras, axes follow the first camera. The chart Hessian
    // is much better conditioned there than in an arbitrary map gauge, so
    // the value does not drift under similarity transforms of the map.
    let (d, n) = (seg.line.d, o.len() as f64);
    let centroid = o.iter().map(|x| x.view.center()).sum::<Vector3<f64>>() / n;
    let foot = centroid + d.cross(&(seg.line.m - centroid.cross(&d)));
    let scale = o.iter().map(|x| (x.view.center() - foot).norm()).sum::<f64>() / n;
    let off = centroid - foot;
    let sigma = if off.norm() > 1e-9 * scale {
        let c = foot + off * (0.5 * scale / off.norm());
        let s = 1.0 / scale;
        let r0 = o[0].view.rotation;
        let to_local = |x: &Vector3<f64>| r0 * (x - c) * s;
        let local: Vec<View> = o
            .iter()
            .map(|x| View::new(x.view.view_id, x.view.intrinsics, x.view.rotation * r0.transpose(), (x.view.rotation * c + x.view.translation) * s))
            .collect::<Result<_>>()?;
        let lo: Vec<LineObservation<f64>> = o.iter().zip(&local).map(|(x, v)| LineObservation { view: v, ..*x }).collect();
        let line = Line3 { d: r0 * d, m: r0 * (seg.line.m - c.cross(&d)) * s };
        let lc = line_covariance(&line.to_ortho(), &lo, kernel, &[to_local(&seg.start), to_local(&seg.end)])?;
        let vs: Vec<&View> = local.iter().collect();
        scale_invariant_sigma(&lc.endpoints, &vs, &to_local(&seg.midpoint()))?
    } else {
        // Camera centroid on the line: keep the map frame.
        let vs: Vec<&View> = o.iter().map(|x| x.view).collect();
        scale_invariant_sigma(&cov.endpoints, &vs, &seg.midpoint())?
    };
    track.sigma_px = Some(sigma);
    track.covariance = Some(cov.sigma_phi);
    Ok(())
}

pub fn point_uncertainty(track: &mut crate::model::PointTrack, views: &BTreeMap<u32, View>, obs: &ObservationSet) -> Result<()> {
    track.covariance = None;
    track.sigma_px = None;
    let o = point_observations(track, views, obs);
    let cov = point_covariance(&o, &track.point)?;
    let vs: Vec<&View> = o.iter().map(|x| x.0).collect();
    track.sigma_px = Some(scale_invariant_sigma(&[cov], &vs, &track.point)?);
    track.covariance = Some(cov);
    Ok(())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReliabilityState {
    pub reliable_points: usize,
    pub unreliable_points: usize,
    pub reliable_lines: usize,
    pub unreliable_lines: usize,
}

/// Recomputes uncertainties and reliability flags. A track without a
/// covariance is unreliable.
pub fn classify_reliability(map: &mut Map, obs: &ObservationSet, cfg: &RefineConfig, tracks: Option<&TrackSet>) -> ReliabilityState {
    let mut st = ReliabilityState::default();
    let kernel = cfg.line_kernel();
    let views = &map.views;
    for (id, t) in map.lines.iter_mut() {
        if tracks.is_some_and(|s| !s.lines.contains(id)) {
            continue;
        }
        let ok = line_uncertainty(t, views, obs, &kernel).is_ok();
        t.reliable = ok
            && t.active_count() >= cfg.reliable_min_active_lines
            && t.sigma_px.is_some_and(|s| s <= cfg.reliable_max_sigma_px);
        if t.reliable {
            st.reliable_lines += 1;
        } else {
            st.unreliable_lines += 1;
        }
    }
    for (id, t) in map.points.iter_mut() {
        if tracks.is_some_and(|s| !s.points.contains(id)) {
            continue;
        }
        let ok = point_uncertainty(t, views, obs).is_ok();
        t.reliable = ok
            && t.active_count() >= cfg.reliable_min_active_points
            && t.sigma_px.is_some_and(|s| s <= cfg.reliable_max_sigma_px_points);
        if t.reliable {
            st.reliable_points += 1;
        } else {
            st.unreliable_points += 1;
        }
    }
    st
}

/// A subset of tracks by category.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrackSet {
    pub points: BTreeSet<TrackId>,
    pub lines: BTreeSet<TrackId>,
    pub vps: BTreeSet<TrackId>,
}

impl TrackSet {
    pub fn all(map: &Map) -> Self {
        Self {
            points: map.points.keys().copied().collect(),
            lines: map.lines.keys().copied().collect(),
            vps: map.vps.keys().copied().collect(),
        }
    }

    /// Tracks with an active support in one of `views`.
    pub fn covisible(map: &Map, views: &BTreeSet<u32>) -> Self {
        let sees = |s: &[Support]| s.iter().any(|x| x.active && views.contains(&x.view_id));
        Self {
            points: map.points.iter().filter(|(_, t)| sees(&t.supports)).map(|(k, _)| *k).collect(),
            lines: map.lines.iter().filter(|(_, t)| sees(&t.supports)).map(|(k, _)| *k).collect(),
            vps: map.vps.iter().filter(|(_, t)| sees(&t.supports)).map(|(k, _)| *k).collect(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RefineReport {
    /// `None` when step 1 was skipped for lack of reliable structure.
    pub joint: Option<BaReport>,
    /// Track ids in the joint problem.
    pub joint_points: Vec<TrackId>,
    pub joint_lines: Vec<TrackId>,
    pub labels: LabelCounts,
    pub reliability: ReliabilityState,
}

/// The joint problem for step 1: reliable tracks only (every track with
/// two active supports when two-step is off).
pub fn joint_problem(map: &Map, cfg: &RefineConfig, tracks: &TrackSet, variable_views: BTreeSet<u32>, fixed_translation: Option<(u32, usize)>) -> BaProblem {
    let usable = |active: usize, reliable: bool| active >= 2 && (reliable || !cfg.two_step);
    BaProblem {
        variable_views,
        fixed_translation,
        points: tracks.points.iter().copied().filter(|id| usable(map.points[id].active_count(), map.points[id].reliable)).collect(),
        lines: tracks.lines.iter().copied().filter(|id| usable(map.lines[id].active_count(), map.lines[id].reliable)).collect(),
        vps: tracks.vps.iter().copied().filter(|id| map.vps[id].active_count() >= cfg.vp_min_active).collect(),
    }
}

/// Step 1 on `variable_views` and reliable tracks of `tracks`, step 2 on
/// the unreliable ones, then labels, endpoints and reliability.
pub fn two_step_refine(
    map: &mut Map,
    obs: &ObservationSet,
    cfg: &RefineConfig,
    tracks: &TrackSet,
    variable_views: BTreeSet<u32>,
    fixed_translation: Option<(u32, usize)>,
) -> Result<RefineReport> {
    let mut report = RefineReport::default();
    classify_reliability(map, obs, cfg, Some(tracks));
    let problem = joint_problem(map, cfg, tracks, variable_views, fixed_translation);
    if problem.points.is_empty() && problem.lines.is_empty() {
        log::debug!("two-step refinement: {}", Error::InsufficientReliableStructure);
    } else {
        report.joint = Some(bundle_adjust(map, obs, &problem, &cfg.ba_options(), false)?);
    }
    let in_joint_p: BTreeSet<TrackId> = problem.points.iter().copied().collect();
    let in_joint_l: BTreeSet<TrackId> = problem.lines.iter().copied().collect();
    report.joint_points = problem.points;
    report.joint_lines = problem.lines;

    let kernel = cfg.line_kernel();
    for id in tracks.lines.iter().filter(|id| !in_joint_l.contains(id)) {
        if let Some(t) = map.lines.get_mut(id) {
            let mut cand = t.clone();
            if refine_line_track(&mut cand, &map.views, obs, &kernel, cfg.track_iterations).is_ok() {
                *t = cand;
            }
        }
    }
    for id in tracks.points.iter().filter(|id| !in_joint_p.contains(id)) {
        if let Some(t) = map.points.get_mut(id) {
            refine_point_track(t, &map.views, obs)?;
        }
    }
    for id in &tracks.vps {
        if let Some(t) = map.vps.get_mut(id) {
            refine_vp_track(t, &map.views, obs, cfg.vp_min_active);
        }
    }

    report.labels = update_active_labels(map, obs, cfg, Some(tracks));
    for id in &tracks.lines {
        if let Some(t) = map.lines.get_mut(id) {
            if recompute_endpoints(t, &map.views, obs).is_err() {
                t.reliable = false;
            }
        }
    }
    report.reliability = classify_reliability(map, obs, cfg, Some(tracks));
    Ok(report)
}

/// Gauge for a global solve: the first registered view fixed, and the
/// translation component of the second view along which it is farthest
/// from the first.
pub fn global_gauge(map: &Map) -> (BTreeSet<u32>, Option<(u32, usize)>) {
    let Some(&first) = map.order.first() else { return (BTreeSet::new(), None) };
    let variable: BTreeSet<u32> = map.order.iter().copied().filter(|v| *v != first).collect();
    let fixed = map.order.get(1).map(|&second| {
        let (a, b) = (&map.views[&first], &map.views[&second]);
        let rel = b.rotation * (b.center() - a.center());
        (second, rel.iamax())
    });
    (variable, fixed)
}

pub fn global_ba(map: &mut Map, obs: &ObservationSet, cfg: &RefineConfig) -> Result<RefineReport> {
    let (variable, fixed) = global_gauge(map);
    let tracks = TrackSet::all(map);
    two_step_refine(map, obs, cfg, &tracks, variable, fixed)
}

/// Two-step refinement of the most recent `local_window` views and their
/// co-visible tracks, other views held fixed. A window covering every
/// view is the global problem.
pub fn local_ba(map: &mut Map, obs: &ObservationSet, cfg: &RefineConfig) -> Result<RefineReport> {
    if map.order.len() <= cfg.local_window {
        return global_ba(map, obs, cfg);
    }
    let window: BTreeSet<u32> = map.order[map.order.len() - cfg.local_window..].iter().copied().collect();
    let tracks = TrackSet::covisible(map, &window);
    two_step_refine(map, obs, cfg, &tracks, window, None)
}
