//! Incremental track construction when a new view is registered: point
//! continue/create, line continue/create/merge/complete with endpoint
//! recomputation, and the analogous operations on vanishing points.

pub mod lines;
pub mod points;
pub mod vps;

#[cfg(test)]
mod tests;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub use lines::{line_complete, line_continue, line_create, line_merge, line_merge_among, line_score, LineScore};
pub use points::{point_complete, point_continue, point_create, point_merge, point_merge_among};
pub use vps::{derive_vp_matches, vp_complete, vp_continue, vp_create, vp_merge};

use crate::error::{Error, Result};
use crate::model::{Category, LineTrack, Map, ObservationSet, PointTrack, TrackId, View, VpTrack};
use crate::refine::track::{recompute_endpoints, refine_line_track, refine_point_track};
use crate::robust::Kernel;

/// Perpendicular gate for line scoring, pixels.
pub const TAU_P_PX: f64 = 2.0;
/// Angular gate for line scoring, degrees.
pub const TAU_A_DEG: f64 = 5.0;
/// Detections longer than this are triangulated anew even when they could
/// continue an existing track, pixels.
pub const RETRIANGULATE_MIN_LENGTH_PX: f64 = 100.0;
/// Line triangulation starts once this many views are registered.
pub const LINE_START_VIEWS: usize = 4;
/// Angular gate for VP continue, merge and complete, degrees.
pub const VP_GATE_DEG: f64 = 3.0;
/// Two VP detections are matched if their lines share this many matches.
pub const VP_MIN_LINE_MATCHES: usize = 5;
/// VP tracks merge only if their supports share this many matches.
pub const VP_MERGE_MIN_SHARED: usize = 3;
/// Point continue/create reprojection gate, pixels.
pub const POINT_THRESHOLD_PX: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MappingConfig {
    pub tau_p_px: f64,
    pub tau_a_deg: f64,
    /// Minimum mutual overlap between a detection and a projected segment.
    pub min_overlap: f64,
    pub retriangulate_min_length_px: f64,
    pub line_start_views: usize,
    pub point_threshold_px: f64,
    /// Minimum triangulation angle for new points, degrees.
    pub min_point_angle_deg: f64,
    pub vp_gate_deg: f64,
    pub vp_merge_min_shared: usize,
    /// Fraction of the other track's active supports a line must explain
    /// for two tracks to merge.
    pub merge_agreement: f64,
    pub enable_lines: bool,
    pub enable_vps: bool,
    pub kernel: Kernel<f64>,
    pub track_iterations: usize,
}

impl Default for MappingConfig {
    fn default() -> Self {
        Self {
            tau_p_px: TAU_P_PX,
            tau_a_deg: TAU_A_DEG,
            min_overlap: 0.05,
            retriangulate_min_length_px: RETRIANGULATE_MIN_LENGTH_PX,
            line_start_views: LINE_START_VIEWS,
            point_threshold_px: POINT_THRESHOLD_PX,
            min_point_angle_deg: 1.5,
            vp_gate_deg: VP_GATE_DEG,
            vp_merge_min_shared: VP_MERGE_MIN_SHARED,
            merge_agreement: 0.5,
            enable_lines: true,
            enable_vps: true,
            kernel: Kernel::default(),
            track_iterations: 30,
        }
    }
}

/// The effect of one incremental step: final state of every touched track
/// and the ids removed. Applying it to a copy of the map taken before the
/// step reproduces the map after it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MapDelta {
    pub view_id: u32,
    pub created: Vec<(Category, TrackId)>,
    pub extended: Vec<(Category, TrackId)>,
    /// `(category, base, absorbed)`.
    pub merged: Vec<(Category, TrackId, TrackId)>,
    pub removed: Vec<(Category, TrackId)>,
    pub points: BTreeMap<TrackId, PointTrack>,
    pub lines: BTreeMap<TrackId, LineTrack>,
    pub vps: BTreeMap<TrackId, VpTrack>,
    /// Views new since `before`, in registration order.
    pub registered: Vec<u32>,
    /// New or changed views.
    pub views: BTreeMap<u32, View>,
    pub next_id: TrackId,
}

fn diff<T: Clone + PartialEq>(
    c: Category,
    before: &BTreeMap<TrackId, T>,
    after: &BTreeMap<TrackId, T>,
    delta: &mut MapDelta,
) -> BTreeMap<TrackId, T> {
    let mut up = BTreeMap::new();
    for (id, t) in after {
        match before.get(id) {
            None => {
                delta.created.push((c, *id));
                up.insert(*id, t.clone());
            }
            Some(b) if b != t => {
                delta.extended.push((c, *id));
                up.insert(*id, t.clone());
            }
            _ => {}
        }
    }
    for id in before.keys().filter(|id| !after.contains_key(id)) {
        delta.removed.push((c, *id));
    }
    up
}

impl MapDelta {
    pub fn between(view_id: u32, before: &Map, after: &Map, merged: Vec<(Category, TrackId, TrackId)>) -> Self {
        let mut d = MapDelta { view_id, merged, next_id: after.next_id, ..Default::default() };
        d.points = diff(Category::Point, &before.points, &after.points, &mut d);
        d.lines = diff(Category::Line, &before.lines, &after.lines, &mut d);
        d.vps = diff(Category::Vp, &before.vps, &after.vps, &mut d);
        d.registered = after.order.iter().filter(|v| !before.is_registered(**v)).copied().collect();
        d.views = after
            .views
            .iter()
            .filter(|(id, v)| before.views.get(id) != Some(v))
            .map(|(id, v)| (*id, v.clone()))
            .collect();
        d
    }

    pub fn apply(&self, map: &mut Map) {
        for (c, id) in &self.removed {
            match c {
                Category::Point => {
                    map.points.remove(id);
                }
                Category::Line => {
                    map.lines.remove(id);
                }
                Category::Vp => {
                    map.vps.remove(id);
                }
            }
        }
        map.points.extend(self.points.iter().map(|(k, v)| (*k, v.clone())));
        map.lines.extend(self.lines.iter().map(|(k, v)| (*k, v.clone())));
        map.vps.extend(self.vps.iter().map(|(k, v)| (*k, v.clone())));
        map.next_id = self.next_id;
        for id in &self.registered {
            if let Some(v) = self.views.get(id) {
                map.register(v.clone());
            }
        }
        for (id, v) in &self.views {
            map.views.insert(*id, v.clone());
        }
    }
}

/// Views whose line detections are processed when `view_id` is registered:
/// none before the start count, all registered views when it is reached
/// (so the first views are not skipped), and the new view afterwards.
pub fn line_views(map: &Map, view_id: u32, start: usize) -> Vec<u32> {
    let n = map.order.len();
    if n < start {
        vec![]
    } else if n == start {
        map.order.clone()
    } else {
        vec![view_id]
    }
}

/// Grows the map after `view_id` has been registered.
pub fn incremental_step(map: &mut Map, obs: &ObservationSet, cfg: &MappingConfig, view_id: u32) -> Result<MapDelta> {
    if !map.is_registered(view_id) {
        return Err(Error::ViewNotRegistered(view_id));
    }
    let before = map.clone();
    let mut merged = Vec::new();

    // Points.
    let mut touched_points = BTreeSet::new();
    touched_points.extend(point_continue(map, obs, cfg, view_id));
    let created = point_create(map, obs, cfg, view_id);
    for id in &created {
        point_complete(map, obs, cfg, *id);
    }
    touched_points.extend(created);
    for id in &touched_points {
        if let Some(t) = map.points.get_mut(id) {
            refine_point_track(t, &map.views, obs)?;
        }
    }
    merged.extend(point_merge_among(map, obs, cfg, Some(&touched_points)).into_iter().map(|(a, b)| (Category::Point, a, b)));

    // Lines.
    if cfg.enable_lines {
        let mut touched = BTreeSet::new();
        for v in line_views(map, view_id, cfg.line_start_views) {
            let n = obs.image(v).map_or(0, |i| i.segments.len());
            for f in 0..n as u32 {
                if let Some(id) = line_detection(map, obs, cfg, v, f) {
                    touched.insert(id);
                }
            }
        }
        refine_lines(map, obs, cfg, &touched);
        merged.extend(line_merge_among(map, obs, cfg, Some(&touched)).into_iter().map(|(a, b)| (Category::Line, a, b)));
        line_complete(map, obs, cfg);
        let ids: Vec<TrackId> = map.lines.keys().copied().collect();
        for id in ids {
            let t = map.lines.get_mut(&id).unwrap();
            let _ = recompute_endpoints(t, &map.views, obs);
        }
    }

    // Vanishing points.
    if cfg.enable_vps {
        let n = obs.image(view_id).map_or(0, |i| i.vps.len());
        for f in 0..n as u32 {
            if vp_continue(map, obs, cfg, view_id, f).is_none() {
                vp_create(map, obs, cfg, view_id, f);
            }
        }
        merged.extend(vp_merge(map, obs, cfg).into_iter().map(|(a, b)| (Category::Vp, a, b)));
        vp_complete(map, obs, cfg);
    }

    Ok(MapDelta::between(view_id, &before, map, merged))
}

/// Continue or create for one detection, with the long-line rule: long
/// detections try creation first and fall back to continuation.
fn line_detection(map: &mut Map, obs: &ObservationSet, cfg: &MappingConfig, view_id: u32, f: u32) -> Option<TrackId> {
    let feature = crate::model::FeatureRef::new(view_id, f);
    if map.lines.values().any(|t| t.has_feature(&feature)) {
        return None;
    }
    let len = obs.image(view_id)?.segments.get(f as usize)?.length();
    if creates_first(len, cfg) {
        line_create(map, obs, cfg, view_id, f).or_else(|| line_continue(map, obs, cfg, view_id, f))
    } else {
        line_continue(map, obs, cfg, view_id, f).or_else(|| line_create(map, obs, cfg, view_id, f))
    }
}

/// Long detections are triangulated anew before trying to continue.
pub fn creates_first(length_px: f64, cfg: &MappingConfig) -> bool {
    length_px > cfg.retriangulate_min_length_px
}

pub(crate) fn refine_lines(map: &mut Map, obs: &ObservationSet, cfg: &MappingConfig, ids: &BTreeSet<TrackId>) {
    for id in ids {
        let Some(t) = map.lines.get_mut(id) else { continue };
        let mut cand = t.clone();
        if refine_line_track(&mut cand, &map.views, obs, &cfg.kernel, cfg.track_iterations).is_ok() {
            *t = cand;
        }
    }
}
