//! Fixed-pose refinement of individual tracks against their active supports.

use std::collections::BTreeMap;

use nalgebra::Vector3;

use super::line::optimize_line;
use crate::error::{Error, Result};
use crate::geom::{
    triangulate_point_multiview, unproject_endpoint_to_line, Line3, Segment2, Segment3,
};
use crate::model::{LineTrack, ObservationSet, PointTrack, Support, View, VpTrack};
use crate::residual::{line_cost, LineObservation};
use crate::robust::Kernel;

pub fn segment_of<'a>(obs: &'a ObservationSet, s: &Support) -> Option<&'a Segment2<f64>> {
    obs.image(s.view_id)?.segments.get(s.feature_id as usize)
}

pub fn keypoint_of(obs: &ObservationSet, s: &Support) -> Option<nalgebra::Vector2<f64>> {
    obs.image(s.view_id)?.keypoints.get(s.feature_id as usize).copied()
}

/// Observations of the track's active supports in registered views.
pub fn line_observations<'a>(
    track: &LineTrack,
    views: &'a BTreeMap<u32, View>,
    obs: &ObservationSet,
) -> Vec<LineObservation<'a, f64>> {
    track
        .active_supports()
        .filter_map(|s| {
            let view = views.get(&s.view_id)?;
            let seg = segment_of(obs, s)?;
            Some(LineObservation { view, start: seg.start, end: seg.end })
        })
        .collect()
}

/// Minimizes the robust endpoint cost over the infinite line, then
/// recomputes endpoints. Tracks with fewer than two usable supports are
/// left as they are.
pub fn refine_line_track(
    track: &mut LineTrack,
    views: &BTreeMap<u32, View>,
    obs: &ObservationSet,
    kernel: &Kernel<f64>,
    max_iterations: usize,
) -> Result<()> {
    let o = line_observations(track, views, obs);
    if o.len() < 2 {
        return Ok(());
    }
    let phi0 = track.segment.line.to_ortho();
    let fit = optimize_line(&phi0, &o, kernel, max_iterations, 1e-10)?;
    if !(fit.cost <= fit.initial_cost) {
        return Err(Error::OptimizationDiverged);
    }
    let line = fit.phi.to_plucker()?;
    let a = line.project_point(&track.segment.start);
    let b = line.project_point(&track.segment.end);
    track.segment = Segment3::on_line(line, &a, &b)?;
    recompute_endpoints(track, views, obs)
}

/// Robust cost of the track's current line over its active supports.
pub fn line_track_cost(
    track: &LineTrack,
    views: &BTreeMap<u32, View>,
    obs: &ObservationSet,
    kernel: &Kernel<f64>,
) -> Result<f64> {
    line_cost(&track.segment.line.to_ortho(), &line_observations(track, views, obs), kernel)
}

/// New endpoints: extremal unprojections of all active supports' endpoints
/// along the line direction. Unprojections behind their camera are skipped.
pub fn recompute_endpoints(
    track: &mut LineTrack,
    views: &BTreeMap<u32, View>,
    obs: &ObservationSet,
) -> Result<()> {
    let line = track.segment.line;
    let (lo, hi) = extremal_coordinates(&line, track.active_supports(), views, obs)?;
    track.segment = Segment3::on_line(line, &line.at(lo), &line.at(hi))?;
    Ok(())
}

pub fn extremal_coordinates<'s>(
    line: &Line3<f64>,
    supports: impl Iterator<Item = &'s Support>,
    views: &BTreeMap<u32, View>,
    obs: &ObservationSet,
) -> Result<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for s in supports {
        let (Some(view), Some(seg)) = (views.get(&s.view_id), segment_of(obs, s)) else {
            continue;
        };
        for x in [seg.start, seg.end] {
            let Ok(p) = unproject_endpoint_to_line(line, view, &x) else { continue };
            if view.depth(&p) <= 0.0 {
                continue;
            }
            let c = line.coordinate(&p);
            lo = lo.min(c);
            hi = hi.max(c);
        }
    }
    if !(hi > lo) {
        return Err(Error::AllRaysDegenerate);
    }
    Ok((lo, hi))
}

pub fn point_observations<'a>(
    track: &PointTrack,
    views: &'a BTreeMap<u32, View>,
    obs: &ObservationSet,
) -> Vec<(&'a View, nalgebra::Vector2<f64>)> {
    track
        .active_supports()
        .filter_map(|s| Some((views.get(&s.view_id)?, keypoint_of(obs, s)?)))
        .collect()
}

/// Multi-view re-triangulation from the active supports; the point is kept
/// if that fails or does not lower the reprojection error.
pub fn refine_point_track(track: &mut PointTrack, views: &BTreeMap<u32, View>, obs: &ObservationSet) -> Result<()> {
    let o = point_observations(track, views, obs);
    if o.len() < 2 {
        return Ok(());
    }
    let cost = |x: &Vector3<f64>| -> f64 {
        o.iter()
            .map(|(v, p)| v.project_point(x).map_or(f64::INFINITY, |q| (q - p).norm_squared()))
            .sum()
    };
    if let Ok(t) = triangulate_point_multiview(&o) {
        if cost(&t.point) <= cost(&track.point) {
            track.point = t.point;
        }
    }
    Ok(())
}

/// World direction of a VP support, or `None` if its view is unregistered.
pub fn vp_world_direction(obs: &ObservationSet, views: &BTreeMap<u32, View>, s: &Support) -> Option<Vector3<f64>> {
    let view = views.get(&s.view_id)?;
    let img = obs.image(s.view_id)?;
    if s.feature_id as usize >= img.vps.len() {
        return None;
    }
    Some(view.rotation.transpose() * img.vp_bearing(s.feature_id))
}

/// Sign-aligned mean of unit directions, renormalized.
pub fn average_direction(dirs: &[Vector3<f64>]) -> Option<Vector3<f64>> {
    let first = dirs.first()?;
    let sum: Vector3<f64> = dirs
        .iter()
        .map(|d| if d.dot(first) < 0.0 { -d } else { *d })
        .sum();
    let n = sum.norm();
    (n > 1e-12).then(|| sum / n)
}

/// Re-averages a VP direction over its active supports, if there are at
/// least `min_active`.
pub fn refine_vp_track(track: &mut VpTrack, views: &BTreeMap<u32, View>, obs: &ObservationSet, min_active: usize) {
    let dirs: Vec<Vector3<f64>> = track
        .active_supports()
        .filter_map(|s| vp_world_direction(obs, views, s))
        .collect();
    if dirs.len() < min_active {
        return;
    }
    if let Some(mut d) = average_direction(&dirs) {
        if d.dot(&track.direction) < 0.0 {
            d = -d;
        }
        track.direction = d;
    }
}
