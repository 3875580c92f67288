//! Point track continue, create and complete with a fixed reprojection gate.

use std::collections::BTreeSet;

use nalgebra::{Vector2, Vector3};

use super::MappingConfig;
use crate::geom::triangulate_point_multiview;
use crate::model::{FeatureRef, Map, ObservationSet, PointTrack, Support, TrackId, View};
use crate::refine::track::keypoint_of;

fn owned(map: &Map) -> BTreeSet<FeatureRef> {
    map.points.values().flat_map(|t| t.supports.iter().map(|s| s.feature())).collect()
}

fn reprojection_error(view: &View, x: &Vector3<f64>, obs: &Vector2<f64>) -> Option<f64> {
    if view.depth(x) <= 0.0 {
        return None;
    }
    view.project_point(x).ok().map(|p| (p - obs).norm())
}

/// Angle between the viewing rays of `x` from two camera centers, degrees.
pub fn triangulation_angle(a: &View, b: &View, x: &Vector3<f64>) -> f64 {
    let ra = (x - a.center()).normalize();
    let rb = (x - b.center()).normalize();
    ra.dot(&rb).clamp(-1.0, 1.0).acos().to_degrees()
}

/// Attaches unowned keypoints of `view_id` to matched tracks that reproject
/// within the gate; the closest wins.
pub fn point_continue(map: &mut Map, obs: &ObservationSet, cfg: &MappingConfig, view_id: u32) -> Vec<TrackId> {
    let (Some(img), Some(view)) = (obs.image(view_id), map.views.get(&view_id).cloned()) else {
        return vec![];
    };
    let mut owners = std::collections::BTreeMap::new();
    for (id, t) in &map.points {
        for s in &t.supports {
            owners.entry(s.feature()).or_insert(*id);
        }
    }
    let mut touched = Vec::new();
    for (f, x) in img.keypoints.iter().enumerate() {
        let feature = FeatureRef::new(view_id, f as u32);
        if owners.contains_key(&feature) {
            continue;
        }
        let mut best: Option<(f64, TrackId)> = None;
        for (g, _) in obs.matches.points.neighbors(&feature) {
            let Some(&id) = owners.get(&g) else { continue };
            let Some(e) = reprojection_error(&view, &map.points[&id].point, x) else { continue };
            if e < cfg.point_threshold_px && best.is_none_or(|(b, bid)| e < b || (e == b && id < bid)) {
                best = Some((e, id));
            }
        }
        if let Some((_, id)) = best {
            map.points.get_mut(&id).unwrap().add_support(Support::new(feature));
            owners.insert(feature, id);
            touched.push(id);
        }
    }
    touched
}

/// Two-view triangulation of unowned keypoints of `view_id` against unowned
/// matched keypoints in registered views.
pub fn point_create(map: &mut Map, obs: &ObservationSet, cfg: &MappingConfig, view_id: u32) -> Vec<TrackId> {
    let (Some(img), Some(view)) = (obs.image(view_id), map.views.get(&view_id).cloned()) else {
        return vec![];
    };
    let mut taken = owned(map);
    let mut created = Vec::new();
    for (f, x) in img.keypoints.iter().enumerate() {
        let feature = FeatureRef::new(view_id, f as u32);
        if taken.contains(&feature) {
            continue;
        }
        let mut partners: Vec<(FeatureRef, f64)> = obs
            .matches
            .points
            .neighbors(&feature)
            .filter(|(g, _)| g.view_id != view_id && map.views.contains_key(&g.view_id) && !taken.contains(g))
            .collect();
        partners.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        for (g, _) in partners {
            let pview = &map.views[&g.view_id];
            let Some(px) = keypoint_of(obs, &Support::new(g)) else { continue };
            let Ok(tri) = triangulate_point_multiview(&[(&view, *x), (pview, px)]) else { continue };
            let p = tri.point;
            let ok = |v: &View, o: &Vector2<f64>| reprojection_error(v, &p, o).is_some_and(|e| e < cfg.point_threshold_px);
            if ok(&view, x) && ok(pview, &px) && triangulation_angle(&view, pview, &p) >= cfg.min_point_angle_deg {
                let id = map.allocate_id();
                map.points.insert(id, PointTrack::new(p, vec![Support::new(feature), Support::new(g)]));
                taken.insert(feature);
                taken.insert(g);
                created.push(id);
                break;
            }
        }
    }
    created
}

/// Transitively collects unowned matched keypoints in registered views that
/// reproject within the gate.
pub fn point_complete(map: &mut Map, obs: &ObservationSet, cfg: &MappingConfig, id: TrackId) -> usize {
    let mut taken = owned(map);
    let mut added = 0;
    let mut frontier: Vec<FeatureRef> = match map.points.get(&id) {
        Some(t) => t.supports.iter().map(|s| s.feature()).collect(),
        None => return 0,
    };
    while let Some(f) = frontier.pop() {
        let neighbors: Vec<FeatureRef> = obs.matches.points.neighbors(&f).map(|(g, _)| g).collect();
        for g in neighbors {
            if taken.contains(&g) {
                continue;
            }
            let (Some(view), Some(x)) = (map.views.get(&g.view_id), keypoint_of(obs, &Support::new(g))) else {
                continue;
            };
            let t = map.points.get_mut(&id).unwrap();
            if reprojection_error(view, &t.point, &x).is_some_and(|e| e < cfg.point_threshold_px) {
                t.add_support(Support::new(g));
                taken.insert(g);
                frontier.push(g);
                added += 1;
            }
        }
    }
    added
}

/// Merges point tracks connected by a match edge when one point
/// triangulated from both reprojects within the gate in every active
/// support. Runs to a fixed point.
pub fn point_merge(map: &mut Map, obs: &ObservationSet, cfg: &MappingConfig) -> Vec<(TrackId, TrackId)> {
    point_merge_among(map, obs, cfg, None)
}

/// [`point_merge`] restricted to pairs with at least one track in `only`.
pub fn point_merge_among(
    map: &mut Map,
    obs: &ObservationSet,
    cfg: &MappingConfig,
    only: Option<&BTreeSet<TrackId>>,
) -> Vec<(TrackId, TrackId)> {
    let mut only = only.cloned();
    let mut merged = Vec::new();
    let mut rejected = BTreeSet::new();
    loop {
        let mut owners = std::collections::BTreeMap::new();
        for (id, t) in &map.points {
            for s in &t.supports {
                owners.entry(s.feature()).or_insert(*id);
            }
        }
        let mut pairs = BTreeSet::new();
        for (a, t) in &map.points {
            for s in &t.supports {
                for (g, _) in obs.matches.points.neighbors(&s.feature()) {
                    if let Some(&b) = owners.get(&g) {
                        if b != *a {
                            pairs.insert((*a.min(&b), *a.max(&b)));
                        }
                    }
                }
            }
        }
        let mut changed = false;
        for (a, b) in pairs {
            if rejected.contains(&(a, b)) || only.as_ref().is_some_and(|o| !o.contains(&a) && !o.contains(&b)) {
                continue;
            }
            let (Some(ta), Some(tb)) = (map.points.get(&a), map.points.get(&b)) else { continue };
            let (base, absorbed) = if tb.active_count() > ta.active_count() { (b, a) } else { (a, b) };
            let mut union = map.points[&base].clone();
            for s in &map.points[&absorbed].supports {
                union.add_support(*s);
            }
            let o = crate::refine::track::point_observations(&union, &map.views, obs);
            let Ok(tri) = triangulate_point_multiview(&o) else {
                rejected.insert((a, b));
                continue;
            };
            if o.iter().all(|(v, x)| reprojection_error(v, &tri.point, x).is_some_and(|e| e < cfg.point_threshold_px)) {
                union.point = tri.point;
                map.points.remove(&absorbed);
                map.points.insert(base, union);
                merged.push((base, absorbed));
                rejected.retain(|(x, y)| *x != base && *y != base);
                if let Some(o) = only.as_mut() {
                    o.insert(base);
                }
                changed = true;
            } else {
                rejected.insert((a, b));
            }
        }
        if !changed {
            return merged;
        }
    }
}
