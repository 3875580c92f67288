use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{HybridCorrSet, LineMatch, PointMatch, VpMatch};
use crate::error::{Error, Result};
use crate::model::{Category, FeatureRef, Map, ObservationSet, TrackId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorrespondenceOptions {
    pub min_point_active: usize,
    pub min_line_active: usize,
    pub min_vp_active: usize,
    pub use_lines: bool,
    pub use_vps: bool,
}

impl Default for CorrespondenceOptions {
    fn default() -> Self {
        Self {
            min_point_active: 2,
            min_line_active: 2,
            min_vp_active: 2,
            use_lines: true,
            use_vps: true,
        }
    }
}

/// For each feature of the image, the track owning most of its matched
/// neighbors (lowest id on ties).
fn vote(
    map: &Map,
    obs: &ObservationSet,
    c: Category,
    view_id: u32,
    n: usize,
    eligible: impl Fn(TrackId) -> bool,
) -> Vec<(u32, TrackId)> {
    let index = map.feature_index(c);
    let graph = obs.matches.get(c);
    let mut out = vec![];
    for f in 0..n as u32 {
        let mut votes: BTreeMap<TrackId, usize> = BTreeMap::new();
        for (nb, _) in graph.neighbors(&FeatureRef::new(view_id, f)) {
            if let Some(id) = index.get(&nb) {
                if map.is_registered(nb.view_id) && eligible(*id) {
                    *votes.entry(*id).or_default() += 1;
                }
            }
        }
        let mut best: Option<(TrackId, usize)> = None;
        for (id, k) in votes {
            if best.is_none_or(|(_, b)| k > b) {
                best = Some((id, k));
            }
        }
        if let Some((id, _)) = best {
            out.push((f, id));
        }
    }
    out
}

/// 2D-3D correspondences for an unregistered view, found by traversing
/// the match graphs from its features to registered tracks.
pub fn collect_correspondences(
    map: &Map,
    obs: &ObservationSet,
    view_id: u32,
    opts: &CorrespondenceOptions,
) -> Result<HybridCorrSet> {
    let image = obs.image(view_id).ok_or(Error::Parse(format!("no observations for view {view_id}")))?;
    let mut set = HybridCorrSet::new(image.intrinsics);
    let pts = vote(map, obs, Category::Point, view_id, image.keypoints.len(), |id| {
        map.points[&id].active_count() >= opts.min_point_active
    });
    for (f, id) in pts {
        let t = &map.points[&id];
        set.points.push(PointMatch {
            pixel: image.keypoints[f as usize],
            point: t.point,
            covariance: t.covariance,
            track: Some(id),
            feature: Some(f),
        });
    }
    if opts.use_lines {
        let lines = vote(map, obs, Category::Line, view_id, image.segments.len(), |id| {
            map.lines[&id].active_count() >= opts.min_line_active
        });
        for (f, id) in lines {
            let t = &map.lines[&id];
            set.lines.push(LineMatch {
                segment: image.segments[f as usize],
                line: t.segment,
                covariance: t.covariance,
                track: Some(id),
                feature: Some(f),
            });
        }
    }
    if opts.use_vps {
        let vps = vote(map, obs, Category::Vp, view_id, image.vps.len(), |id| {
            map.vps[&id].active_count() >= opts.min_vp_active
        });
        for (f, id) in vps {
            set.vps.push(VpMatch {
                direction: image.vps[f as usize].direction,
                v3d: map.vps[&id].direction,
                track: Some(id),
                feature: Some(f),
            });
        }
    }
    Ok(set)
}
