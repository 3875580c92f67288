//! Line track continue, create, merge and complete.

use std::collections::{BTreeMap, BTreeSet};

use super::MappingConfig;
use crate::geom::{angle_to_line, max_endpoint_distance, mutual_overlap, project_segment, triangulate_line_two_view, Segment2, Segment3};
use crate::model::{FeatureRef, LineTrack, Map, ObservationSet, Support, TrackId, View};
use crate::refine::line::optimize_line;
use crate::refine::track::{line_observations, recompute_endpoints, segment_of};

/// Agreement of a detection with a projected 3D segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineScore {
    /// Larger endpoint distance to the projected infinite line, pixels.
    pub d_perp: f64,
    /// Angle to the projected line, degrees.
    pub d_ang: f64,
    pub overlap: f64,
    /// `min(exp(-d_perp / tau_p), exp(-d_ang / tau_a))`.
    pub score: f64,
}

impl LineScore {
    /// Both errors strictly below their gates.
    pub fn within_gates(&self, cfg: &MappingConfig) -> bool {
        self.d_perp < cfg.tau_p_px && self.d_ang < cfg.tau_a_deg
    }

    pub fn accepted(&self, cfg: &MappingConfig) -> bool {
        self.within_gates(cfg) && self.overlap >= cfg.min_overlap
    }
}

pub fn line_score(view: &View, seg: &Segment3<f64>, det: &Segment2<f64>, cfg: &MappingConfig) -> Option<LineScore> {
    let l = view.project_line(&seg.line).ok()?;
    let d_perp = max_endpoint_distance(det, &l).ok()?;
    let d_ang = angle_to_line(det, &l);
    let overlap = project_segment(view, seg).map_or(0.0, |p| mutual_overlap(&p, det));
    let score = (-d_perp / cfg.tau_p_px).exp().min((-d_ang / cfg.tau_a_deg).exp());
    Some(LineScore { d_perp, d_ang, overlap, score })
}

/// Every track holding each feature.
pub(crate) fn line_owners(map: &Map) -> BTreeMap<FeatureRef, Vec<TrackId>> {
    let mut out: BTreeMap<FeatureRef, Vec<TrackId>> = BTreeMap::new();
    for (id, t) in &map.lines {
        for s in &t.supports {
            out.entry(s.feature()).or_default().push(*id);
        }
    }
    out
}

/// Attaches detection `f` of `view_id` to the best-scoring matched track
/// that accepts it.
pub fn line_continue(map: &mut Map, obs: &ObservationSet, cfg: &MappingConfig, view_id: u32, f: u32) -> Option<TrackId> {
    let view = map.views.get(&view_id)?;
    let feature = FeatureRef::new(view_id, f);
    let det = segment_of(obs, &Support::new(feature))?;
    let owners = line_owners(map);
    let candidates: BTreeSet<TrackId> = obs
        .matches
        .lines
        .neighbors(&feature)
        .filter_map(|(g, _)| owners.get(&g))
        .flatten()
        .copied()
        .collect();
    let mut best: Option<(f64, TrackId)> = None;
    for id in candidates {
        let t = &map.lines[&id];
        let Some(s) = line_score(view, &t.segment, det, cfg) else { continue };
        if s.accepted(cfg) && best.is_none_or(|(b, _)| s.score > b) {
            best = Some((s.score, id));
        }
    }
    let (_, id) = best?;
    map.lines.get_mut(&id)?.add_support(Support::new(feature));
    Some(id)
}

/// Two-view triangulation against matched detections in registered views,
/// by descending match score; the first result accepted by both views
/// becomes a new track.
pub fn line_create(map: &mut Map, obs: &ObservationSet, cfg: &MappingConfig, view_id: u32, f: u32) -> Option<TrackId> {
    let view = map.views.get(&view_id)?;
    let feature = FeatureRef::new(view_id, f);
    let det = segment_of(obs, &Support::new(feature))?;
    let mut partners: Vec<(FeatureRef, f64)> = obs
        .matches
        .lines
        .neighbors(&feature)
        .filter(|(g, _)| g.view_id != view_id && map.views.contains_key(&g.view_id))
        .collect();
    partners.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    for (g, _) in partners {
        let pview = &map.views[&g.view_id];
        let Some(pdet) = segment_of(obs, &Support::new(g)) else { continue };
        let Ok(seg) = triangulate_line_two_view(det, view, pdet, pview) else { continue };
        let ok = |v: &View, d: &Segment2<f64>| line_score(v, &seg, d, cfg).is_some_and(|s| s.accepted(cfg));
        if ok(view, det) && ok(pview, pdet) {
            let id = map.allocate_id();
            map.lines.insert(id, LineTrack::new(seg, vec![Support::new(feature), Support::new(g)]));
            return Some(id);
        }
    }
    None
}

/// Fraction of `track`'s active supports in registered views whose
/// detection lies within the gates of the projection of `line`.
fn agreement(line: &Segment3<f64>, track: &LineTrack, views: &BTreeMap<u32, View>, obs: &ObservationSet, cfg: &MappingConfig) -> f64 {
    let mut n = 0usize;
    let mut ok = 0usize;
    for s in track.active_supports() {
        let (Some(v), Some(det)) = (views.get(&s.view_id), segment_of(obs, s)) else { continue };
        n += 1;
        if line_score(v, line, det, cfg).is_some_and(|x| x.within_gates(cfg)) {
            ok += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        ok as f64 / n as f64
    }
}

/// True if the 3D extents overlap along `a`'s line.
fn extents_overlap(a: &Segment3<f64>, b: &Segment3<f64>) -> bool {
    let (a0, a1) = {
        let (x, y) = (a.line.coordinate(&a.start), a.line.coordinate(&a.end));
        (x.min(y), x.max(y))
    };
    let (x, y) = (a.line.coordinate(&b.start), a.line.coordinate(&b.end));
    x.max(y) > a0 && x.min(y) < a1
}

/// The union of both tracks' supports refit from `base`'s line, if that
/// line agrees with each track on at least `merge_agreement` of its active
/// supports and the 3D extents overlap.
pub(crate) fn merged_track(
    base: &LineTrack,
    other: &LineTrack,
    views: &BTreeMap<u32, View>,
    obs: &ObservationSet,
    cfg: &MappingConfig,
) -> Option<LineTrack> {
    if !extents_overlap(&base.segment, &other.segment) && !extents_overlap(&other.segment, &base.segment) {
        return None;
    }
    let mut union = base.clone();
    for s in &other.supports {
        union.add_support(*s);
    }
    let o = line_observations(&union, views, obs);
    let fit = optimize_line(&union.segment.line.to_ortho(), &o, &cfg.kernel, cfg.track_iterations, 1e-10).ok()?;
    let line = fit.phi.to_plucker().ok()?;
    union.segment = Segment3::on_line(line, &base.segment.start, &base.segment.end).ok()?;
    let ok = agreement(&union.segment, base, views, obs, cfg) >= cfg.merge_agreement
        && agreement(&union.segment, other, views, obs, cfg) >= cfg.merge_agreement;
    if !ok {
        return None;
    }
    recompute_endpoints(&mut union, views, obs).ok()?;
    Some(union)
}

/// Candidate pairs: tracks connected through a match edge or sharing a
/// feature.
fn connected_pairs(map: &Map, obs: &ObservationSet) -> BTreeSet<(TrackId, TrackId)> {
    let owners = line_owners(map);
    let mut pairs = BTreeSet::new();
    for (a, t) in &map.lines {
        for s in &t.supports {
            let f = s.feature();
            let linked = obs.matches.lines.neighbors(&f).map(|(g, _)| g).chain(std::iter::once(f));
            for g in linked {
                for b in owners.get(&g).into_iter().flatten() {
                    if b != a {
                        pairs.insert((*a.min(b), *a.max(b)));
                    }
                }
            }
        }
    }
    pairs
}

/// Merges connected tracks when one line refit over both explains each
/// track's supports. The base is the track with more active supports, ties
/// going to the lower id. Runs to a fixed point, so a second call merges
/// nothing.
pub fn line_merge(map: &mut Map, obs: &ObservationSet, cfg: &MappingConfig) -> Vec<(TrackId, TrackId)> {
    line_merge_among(map, obs, cfg, None)
}

/// [`line_merge`] restricted to pairs with at least one track in `only`
/// (merged bases join the set).
pub fn line_merge_among(
    map: &mut Map,
    obs: &ObservationSet,
    cfg: &MappingConfig,
    only: Option<&BTreeSet<TrackId>>,
) -> Vec<(TrackId, TrackId)> {
    let mut only = only.cloned();
    let mut merged = Vec::new();
    // Pairs already rejected whose tracks have not changed since.
    let mut rejected = BTreeSet::new();
    loop {
        let mut changed = false;
        for (a, b) in connected_pairs(map, obs) {
            if rejected.contains(&(a, b)) || only.as_ref().is_some_and(|o| !o.contains(&a) && !o.contains(&b)) {
                continue;
            }
            let (Some(ta), Some(tb)) = (map.lines.get(&a), map.lines.get(&b)) else { continue };
            let (base, absorbed) = if tb.active_count() > ta.active_count() { (b, a) } else { (a, b) };
            let Some(union) = merged_track(&map.lines[&base], &map.lines[&absorbed], &map.views, obs, cfg) else {
                rejected.insert((a, b));
                continue;
            };
            rejected.retain(|(x, y)| *x != base && *y != base);
            if let Some(o) = only.as_mut() {
                o.insert(base);
            }
            map.lines.remove(&absorbed);
            map.lines.insert(base, union);
            merged.push((base, absorbed));
            changed = true;
        }
        if !changed {
            return merged;
        }
    }
}

/// Adds unowned neighbor detections of each track's supports that agree
/// with its projection; they are marked active immediately.
pub fn line_complete(map: &mut Map, obs: &ObservationSet, cfg: &MappingConfig) -> usize {
    let mut owners = line_owners(map);
    let mut added = 0;
    let ids: Vec<TrackId> = map.lines.keys().copied().collect();
    for id in ids {
        let features: Vec<FeatureRef> = map.lines[&id].supports.iter().map(|s| s.feature()).collect();
        for f in features {
            let neighbors: Vec<FeatureRef> = obs.matches.lines.neighbors(&f).map(|(g, _)| g).collect();
            for g in neighbors {
                if owners.contains_key(&g) {
                    continue;
                }
                let (Some(view), Some(det)) = (map.views.get(&g.view_id), segment_of(obs, &Support::new(g))) else {
                    continue;
                };
                let t = &map.lines[&id];
                if line_score(view, &t.segment, det, cfg).is_some_and(|s| s.accepted(cfg)) {
                    map.lines.get_mut(&id).unwrap().add_support(Support::new(g));
                    owners.entry(g).or_default().push(id);
                    added += 1;
                }
            }
        }
    }
    added
}

