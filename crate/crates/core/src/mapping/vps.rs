//! Vanishing point tracks: 3D directions observed as VP detections.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::Vector3;

use super::{MappingConfig, VP_MIN_LINE_MATCHES};
use crate::model::{FeatureRef, Graph, ImageObservations, Map, ObservationSet, Support, TrackId, VpTrack};
use crate::refine::track::{average_direction, vp_world_direction};

/// Angle between undirected directions, degrees.
pub fn direction_angle(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    (a.dot(b).abs() / (a.norm() * b.norm())).min(1.0).acos().to_degrees()
}

/// Matches VP detections of two images when the lines voting for them
/// share at least [`VP_MIN_LINE_MATCHES`] matches. The score is that count.
pub fn derive_vp_matches(images: &[ImageObservations], lines: &Graph) -> Graph {
    let mut votes: BTreeMap<FeatureRef, Vec<u32>> = BTreeMap::new();
    for img in images {
        for (k, vp) in img.vps.iter().enumerate() {
            for l in &vp.line_ids {
                votes.entry(FeatureRef::new(img.view_id, *l)).or_default().push(k as u32);
            }
        }
    }
    let mut counts: BTreeMap<(FeatureRef, FeatureRef), usize> = BTreeMap::new();
    for e in lines.edges() {
        let (Some(va), Some(vb)) = (votes.get(&e.a), votes.get(&e.b)) else { continue };
        for a in va {
            for b in vb {
                let fa = FeatureRef::new(e.a.view_id, *a);
                let fb = FeatureRef::new(e.b.view_id, *b);
                *counts.entry((fa.min(fb), fa.max(fb))).or_default() += 1;
            }
        }
    }
    let mut g = Graph::default();
    for ((a, b), n) in counts {
        if n >= VP_MIN_LINE_MATCHES && a.view_id != b.view_id {
            g.add(a, b, n as f64);
        }
    }
    g
}

fn vp_owners(map: &Map) -> BTreeMap<FeatureRef, TrackId> {
    let mut out = BTreeMap::new();
    for (id, t) in &map.vps {
        for s in &t.supports {
            out.entry(s.feature()).or_insert(*id);
        }
    }
    out
}

/// Attaches VP detection `f` to the matched track whose direction is
/// closest, if within the gate.
pub fn vp_continue(map: &mut Map, obs: &ObservationSet, cfg: &MappingConfig, view_id: u32, f: u32) -> Option<TrackId> {
    let feature = FeatureRef::new(view_id, f);
    let dir = vp_world_direction(obs, &map.views, &Support::new(feature))?;
    let owners = vp_owners(map);
    if owners.contains_key(&feature) {
        return None;
    }
    let mut best: Option<(f64, TrackId)> = None;
    for (g, _) in obs.matches.vps.neighbors(&feature) {
        let Some(&id) = owners.get(&g) else { continue };
        let a = direction_angle(&dir, &map.vps[&id].direction);
        if a < cfg.vp_gate_deg && best.is_none_or(|(b, _)| a < b) {
            best = Some((a, id));
        }
    }
    let (_, id) = best?;
    map.vps.get_mut(&id)?.add_support(Support::new(feature));
    Some(id)
}

/// One-direction consensus over the detection and its unowned matched
/// detections in registered views: the hypothesis with the most agreeing
/// directions wins, and the track direction is their average.
pub fn vp_create(map: &mut Map, obs: &ObservationSet, cfg: &MappingConfig, view_id: u32, f: u32) -> Option<TrackId> {
    let feature = FeatureRef::new(view_id, f);
    let owners = vp_owners(map);
    if owners.contains_key(&feature) {
        return None;
    }
    let mut cands = vec![feature];
    cands.extend(
        obs.matches
            .vps
            .neighbors(&feature)
            .map(|(g, _)| g)
            .filter(|g| g.view_id != view_id && map.views.contains_key(&g.view_id) && !owners.contains_key(g)),
    );
    let dirs: Vec<(FeatureRef, Vector3<f64>)> = cands
        .into_iter()
        .filter_map(|g| Some((g, vp_world_direction(obs, &map.views, &Support::new(g))?)))
        .collect();
    let mut best: Vec<usize> = Vec::new();
    for (_, h) in &dirs {
        let agree: Vec<usize> = (0..dirs.len()).filter(|&j| direction_angle(h, &dirs[j].1) < cfg.vp_gate_deg).collect();
        if agree.len() > best.len() {
            best = agree;
        }
    }
    // The new detection must be part of the consensus, with one partner.
    if best.len() < 2 || !best.contains(&0) {
        return None;
    }
    let direction = average_direction(&best.iter().map(|&j| dirs[j].1).collect::<Vec<_>>())?;
    let id = map.allocate_id();
    map.vps.insert(
        id,
        VpTrack {
            direction,
            supports: best.iter().map(|&j| Support::new(dirs[j].0)).collect(),
        },
    );
    Some(id)
}

/// Merges VP tracks whose supports share enough matches and whose
/// directions agree; the merged direction is the average over supports.
pub fn vp_merge(map: &mut Map, obs: &ObservationSet, cfg: &MappingConfig) -> Vec<(TrackId, TrackId)> {
    let mut merged = Vec::new();
    loop {
        let owners = vp_owners(map);
        let mut shared: BTreeMap<(TrackId, TrackId), BTreeSet<(FeatureRef, FeatureRef)>> = BTreeMap::new();
        for (a, t) in &map.vps {
            for s in &t.supports {
                for (g, _) in obs.matches.vps.neighbors(&s.feature()) {
                    if let Some(&b) = owners.get(&g) {
                        if b != *a {
                            let e = (s.feature().min(g), s.feature().max(g));
                            shared.entry((*a.min(&b), *a.max(&b))).or_default().insert(e);
                        }
                    }
                }
            }
        }
        let mut changed = false;
        for ((a, b), edges) in shared {
            if edges.len() < cfg.vp_merge_min_shared {
                continue;
            }
            let (Some(ta), Some(tb)) = (map.vps.get(&a), map.vps.get(&b)) else { continue };
            if direction_angle(&ta.direction, &tb.direction) >= cfg.vp_gate_deg {
                continue;
            }
            let (base, absorbed) = if tb.active_count() > ta.active_count() { (b, a) } else { (a, b) };
            let gone = map.vps.remove(&absorbed).unwrap();
            let t = map.vps.get_mut(&base).unwrap();
            for s in gone.supports {
                t.add_support(s);
            }
            let dirs: Vec<Vector3<f64>> = t.supports.iter().filter_map(|s| vp_world_direction(obs, &map.views, s)).collect();
            if let Some(mut d) = average_direction(&dirs) {
                if d.dot(&t.direction) < 0.0 {
                    d = -d;
                }
                t.direction = d;
            }
            merged.push((base, absorbed));
            changed = true;
            break;
        }
        if !changed {
            return merged;
        }
    }
}

/// Adds unowned matched detections within the gate.
pub fn vp_complete(map: &mut Map, obs: &ObservationSet, cfg: &MappingConfig) -> usize {
    let mut owners = vp_owners(map);
    let mut added = 0;
    let ids: Vec<TrackId> = map.vps.keys().copied().collect();
    for id in ids {
        let features: Vec<FeatureRef> = map.vps[&id].supports.iter().map(|s| s.feature()).collect();
        for f in features {
            let neighbors: Vec<FeatureRef> = obs.matches.vps.neighbors(&f).map(|(g, _)| g).collect();
            for g in neighbors {
                if owners.contains_key(&g) {
                    continue;
                }
                let Some(d) = vp_world_direction(obs, &map.views, &Support::new(g)) else { continue };
                if direction_angle(&d, &map.vps[&id].direction) < cfg.vp_gate_deg {
                    map.vps.get_mut(&id).unwrap().add_support(Support::new(g));
                    owners.insert(g, id);
                    added += 1;
                }
            }
        }
    }
    added
}
