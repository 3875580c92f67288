//! Observation sets, match graphs and the incremental map.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{Matrix3, Matrix4, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::geom::{CameraView, Intrinsics, Segment2, Segment3};

pub type View = CameraView<f64>;
pub type TrackId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FeatureRef {
    pub view_id: u32,
    pub feature_id: u32,
}

impl FeatureRef {
    pub fn new(view_id: u32, feature_id: u32) -> Self {
        Self { view_id, feature_id }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Point,
    Line,
    Vp,
}

/// A vanishing point detection: homogeneous pixel direction and the ids of
/// the line segments that vote for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VpDetection {
    pub direction: Vector3<f64>,
    pub line_ids: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageObservations {
    pub view_id: u32,
    pub intrinsics: Intrinsics<f64>,
    pub keypoints: Vec<Vector2<f64>>,
    pub segments: Vec<Segment2<f64>>,
    pub vps: Vec<VpDetection>,
}

impl ImageObservations {
    /// Unit direction of a VP detection in the camera frame.
    pub fn vp_bearing(&self, id: u32) -> Vector3<f64> {
        (self.intrinsics.inverse_matrix() * self.vps[id as usize].direction).normalize()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchEdge {
    pub a: FeatureRef,
    pub b: FeatureRef,
    pub score: f64,
}

/// Symmetric adjacency over features of one category. Serialized as a
/// canonical edge list with `a < b`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Graph {
    adj: BTreeMap<FeatureRef, BTreeMap<FeatureRef, f64>>,
}

impl Graph {
    pub fn add(&mut self, a: FeatureRef, b: FeatureRef, score: f64) {
        if a == b {
            return;
        }
        self.adj.entry(a).or_default().insert(b, score);
        self.adj.entry(b).or_default().insert(a, score);
    }

    pub fn remove(&mut self, a: FeatureRef, b: FeatureRef) {
        if let Some(m) = self.adj.get_mut(&a) {
            m.remove(&b);
        }
        if let Some(m) = self.adj.get_mut(&b) {
            m.remove(&a);
        }
    }

    pub fn neighbors(&self, f: &FeatureRef) -> impl Iterator<Item = (FeatureRef, f64)> + '_ {
        self.adj.get(f).into_iter().flat_map(|m| m.iter().map(|(k, v)| (*k, *v)))
    }

    pub fn contains(&self, a: &FeatureRef, b: &FeatureRef) -> bool {
        self.adj.get(a).is_some_and(|m| m.contains_key(b))
    }

    pub fn edges(&self) -> Vec<MatchEdge> {
        let mut out = Vec::new();
        for (a, m) in &self.adj {
            for (b, s) in m {
                if a < b {
                    out.push(MatchEdge { a: *a, b: *b, score: *s });
                }
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.adj.values().map(|m| m.len()).sum::<usize>() / 2
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_symmetric(&self) -> bool {
        self.adj
            .iter()
            .all(|(a, m)| m.iter().all(|(b, s)| self.adj.get(b).and_then(|n| n.get(a)) == Some(s)))
    }

    /// Number of edges between features of views `va` and `vb`.
    pub fn count_between(&self, va: u32, vb: u32) -> usize {
        self.adj
            .iter()
            .filter(|(a, _)| a.view_id == va)
            .map(|(_, m)| m.keys().filter(|b| b.view_id == vb).count())
            .sum()
    }

    pub fn pairs_between(&self, va: u32, vb: u32) -> Vec<(u32, u32)> {
        let mut out = Vec::new();
        for (a, m) in self.adj.range(FeatureRef::new(va, 0)..=FeatureRef::new(va, u32::MAX)) {
            for b in m.keys().filter(|b| b.view_id == vb) {
                out.push((a.feature_id, b.feature_id));
            }
        }
        out
    }
}

impl Serialize for Graph {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.edges().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Graph {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let edges = Vec::<MatchEdge>::deserialize(d)?;
        let mut g = Graph::default();
        for e in edges {
            g.add(e.a, e.b, e.score);
        }
        Ok(g)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchGraph {
    pub points: Graph,
    pub lines: Graph,
    pub vps: Graph,
}

impl MatchGraph {
    pub fn get(&self, c: Category) -> &Graph {
        match c {
            Category::Point => &self.points,
            Category::Line => &self.lines,
            Category::Vp => &self.vps,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    pub images: Vec<ImageObservations>,
    pub matches: MatchGraph,
}

impl ObservationSet {
    pub fn image(&self, view_id: u32) -> Option<&ImageObservations> {
        self.images.iter().find(|i| i.view_id == view_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Support {
    pub view_id: u32,
    pub feature_id: u32,
    pub active: bool,
}

impl Support {
    pub fn new(f: FeatureRef) -> Self {
        Self {
            view_id: f.view_id,
            feature_id: f.feature_id,
            active: true,
        }
    }

    pub fn feature(&self) -> FeatureRef {
        FeatureRef::new(self.view_id, self.feature_id)
    }
}

fn has_feature(supports: &[Support], f: &FeatureRef) -> bool {
    supports.iter().any(|s| s.feature() == *f)
}

fn push_unique(supports: &mut Vec<Support>, s: Support) -> bool {
    if has_feature(supports, &s.feature()) {
        return false;
    }
    supports.push(s);
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointTrack {
    pub point: Vector3<f64>,
    pub supports: Vec<Support>,
    pub covariance: Option<Matrix3<f64>>,
    pub sigma_px: Option<f64>,
    pub reliable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineTrack {
    pub segment: Segment3<f64>,
    pub supports: Vec<Support>,
    pub covariance: Option<Matrix4<f64>>,
    pub sigma_px: Option<f64>,
    pub reliable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VpTrack {
    pub direction: Vector3<f64>,
    pub supports: Vec<Support>,
}

macro_rules! track_common {
    ($t:ty) => {
        impl $t {
            pub fn active_count(&self) -> usize {
                self.supports.iter().filter(|s| s.active).count()
            }

            pub fn has_feature(&self, f: &FeatureRef) -> bool {
                has_feature(&self.supports, f)
            }

            /// Appends a support unless its feature is already present.
            pub fn add_support(&mut self, s: Support) -> bool {
                push_unique(&mut self.supports, s)
            }

            pub fn active_supports(&self) -> impl Iterator<Item = &Support> {
                self.supports.iter().filter(|s| s.active)
            }
        }
    };
}

track_common!(PointTrack);
track_common!(LineTrack);
track_common!(VpTrack);

impl PointTrack {
    pub fn new(point: Vector3<f64>, supports: Vec<Support>) -> Self {
        Self {
            point,
            supports,
            covariance: None,
            sigma_px: None,
            reliable: false,
        }
    }
}

impl LineTrack {
    pub fn new(segment: Segment3<f64>, supports: Vec<Support>) -> Self {
        Self {
            segment,
            supports,
            covariance: None,
            sigma_px: None,
            reliable: false,
        }
    }
}

/// Registered views and all tracks. Track ids are allocated from one
/// counter shared by all categories and never reused.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Map {
    pub views: BTreeMap<u32, View>,
    /// Registration order.
    pub order: Vec<u32>,
    pub points: BTreeMap<TrackId, PointTrack>,
    pub lines: BTreeMap<TrackId, LineTrack>,
    pub vps: BTreeMap<TrackId, VpTrack>,
    pub next_id: TrackId,
}

impl Map {
    pub fn allocate_id(&mut self) -> TrackId {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    pub fn register(&mut self, view: View) {
        let id = view.view_id;
        if !self.views.contains_key(&id) {
            self.order.push(id);
        }
        self.views.insert(id, view);
    }

    pub fn is_registered(&self, view_id: u32) -> bool {
        self.views.contains_key(&view_id)
    }

    pub fn view(&self, view_id: u32) -> crate::Result<&View> {
        self.views.get(&view_id).ok_or(crate::Error::ViewNotRegistered(view_id))
    }

    /// Feature-to-track index over all supports (active or not).
    pub fn feature_index(&self, c: Category) -> BTreeMap<FeatureRef, TrackId> {
        let mut out = BTreeMap::new();
        let mut add = |id: TrackId, supports: &[Support]| {
            for s in supports {
                out.entry(s.feature()).or_insert(id);
            }
        };
        match c {
            Category::Point => self.points.iter().for_each(|(id, t)| add(*id, &t.supports)),
            Category::Line => self.lines.iter().for_each(|(id, t)| add(*id, &t.supports)),
            Category::Vp => self.vps.iter().for_each(|(id, t)| add(*id, &t.supports)),
        }
        out
    }

    pub fn total_active_line_supports(&self) -> usize {
        self.lines.values().map(|t| t.active_count()).sum()
    }

    /// True if no track holds a feature twice.
    pub fn supports_unique(&self) -> bool {
        fn unique(s: &[Support]) -> bool {
            let set: BTreeSet<FeatureRef> = s.iter().map(|x| x.feature()).collect();
            set.len() == s.len()
        }
        self.points.values().all(|t| unique(&t.supports))
            && self.lines.values().all(|t| unique(&t.supports))
            && self.vps.values().all(|t| unique(&t.supports))
    }
}
