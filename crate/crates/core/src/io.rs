//! File formats: observations, ground truth, maps with their traces, and
//! the run configuration. Everything is pretty-printed JSON with struct
//! field order fixed by the types, map keys sorted (every map in the model
//! is a `BTreeMap`) and floats in shortest round-trip form, so writing a
//! parsed file reproduces it byte for byte.

use std::collections::BTreeSet;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Category, FeatureRef, ImageObservations, Map, MatchGraph, ObservationSet};
use crate::pipeline::{PipelineConfig, TraceStep};
use crate::synth::{GroundTruth, PoseThresholds, SceneSpec};

pub const FORMAT_VERSION: u32 = 1;

fn check_version(v: u32) -> Result<()> {
    if v != FORMAT_VERSION {
        return Err(Error::Parse(format!("unsupported format_version {v}, expected {FORMAT_VERSION}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationFile {
    pub format_version: u32,
    pub images: Vec<ImageObservations>,
    pub matches: MatchGraph,
}

impl ObservationFile {
    pub fn new(obs: ObservationSet) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            images: obs.images,
            matches: obs.matches,
        }
    }

    /// View ids unique, VP line ids and match endpoints in range.
    pub fn validate(&self) -> Result<()> {
        check_version(self.format_version)?;
        let mut ids = BTreeSet::new();
        for i in &self.images {
            if !ids.insert(i.view_id) {
                return Err(Error::Parse(format!("duplicate view id {}", i.view_id)));
            }
            for (k, vp) in i.vps.iter().enumerate() {
                if let Some(l) = vp.line_ids.iter().find(|l| **l as usize >= i.segments.len()) {
                    return Err(Error::Parse(format!("view {} vp {k}: line id {l} out of range", i.view_id)));
                }
            }
        }
        let count = |c: Category, f: &FeatureRef| {
            self.images.iter().find(|i| i.view_id == f.view_id).map(|i| match c {
                Category::Point => i.keypoints.len(),
                Category::Line => i.segments.len(),
                Category::Vp => i.vps.len(),
            })
        };
        for c in [Category::Point, Category::Line, Category::Vp] {
            for e in self.matches.get(c).edges() {
                for f in [e.a, e.b] {
                    if !count(c, &f).is_some_and(|n| (f.feature_id as usize) < n) {
                        return Err(Error::Parse(format!(
                            "{c:?} match references missing feature {}:{}",
                            f.view_id, f.feature_id
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn into_observations(self) -> ObservationSet {
        ObservationSet {
            images: self.images,
            matches: self.matches,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthFile {
    pub format_version: u32,
    pub spec: SceneSpec,
    pub truth: GroundTruth,
}

impl GroundTruthFile {
    pub fn new(spec: SceneSpec, truth: GroundTruth) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            spec,
            truth,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_version(self.format_version)?;
        if self.truth.views.iter().enumerate().any(|(i, v)| v.view_id as usize != i) {
            return Err(Error::Parse("ground-truth view ids must be dense and ordered".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MapFile {
    pub format_version: u32,
    pub map: Map,
    pub trace: Vec<TraceStep>,
}

impl MapFile {
    pub fn new(map: Map, trace: Vec<TraceStep>) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            map,
            trace,
        }
    }

    /// Every support names a registered view, and with `obs` an existing
    /// feature.
    pub fn validate(&self, obs: Option<&ObservationSet>) -> Result<()> {
        check_version(self.format_version)?;
        let m = &self.map;
        if m.order.len() != m.views.len() || m.order.iter().any(|v| !m.views.contains_key(v)) {
            return Err(Error::Parse("registration order does not match the views".into()));
        }
        if let Some((k, v)) = m.views.iter().find(|(k, v)| **k != v.view_id) {
            return Err(Error::Parse(format!("view key {k} holds view {}", v.view_id)));
        }
        let all = m
            .points
            .iter()
            .map(|(id, t)| (Category::Point, *id, &t.supports))
            .chain(m.lines.iter().map(|(id, t)| (Category::Line, *id, &t.supports)))
            .chain(m.vps.iter().map(|(id, t)| (Category::Vp, *id, &t.supports)));
        for (c, id, supports) in all {
            if id >= m.next_id {
                return Err(Error::Parse(format!("track id {id} not below next_id {}", m.next_id)));
            }
            for s in supports {
                if !m.views.contains_key(&s.view_id) {
                    return Err(Error::Parse(format!("track {id} references unregistered view {}", s.view_id)));
                }
                if let Some(obs) = obs {
                    let image = obs
                        .image(s.view_id)
                        .ok_or_else(|| Error::Parse(format!("no observations for view {}", s.view_id)))?;
                    let n = match c {
                        Category::Point => image.keypoints.len(),
                        Category::Line => image.segments.len(),
                        Category::Vp => image.vps.len(),
                    };
                    if s.feature_id as usize >= n {
                        return Err(Error::Parse(format!("track {id} references missing feature {}:{}", s.view_id, s.feature_id)));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Metric settings for `eval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Map precision/recall distances, scene units.
    pub epsilons: Vec<f64>,
    pub min_supports: usize,
    pub thresholds: PoseThresholds,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            epsilons: vec![0.05, 0.1, 0.2, 0.5],
            min_supports: 4,
            thresholds: PoseThresholds::default(),
        }
    }
}

/// The `--config` document. Every section and field is optional.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub pipeline: PipelineConfig,
    pub scene: SceneSpec,
    pub eval: EvalConfig,
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn from_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    Ok(serde_json::from_str(text)?)
}

/// Reads and parses a file. A missing or unreadable file is a parse error
/// too: either way the input is unusable.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    from_json(&text).map_err(|e| match e {
        Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
        e => e,
    })
}

pub fn read_observations(path: &Path) -> Result<ObservationSet> {
    let f: ObservationFile = read_json(path)?;
    f.validate()?;
    Ok(f.into_observations())
}

pub fn read_ground_truth(path: &Path) -> Result<GroundTruthFile> {
    let f: GroundTruthFile = read_json(path)?;
    f.validate()?;
    Ok(f)
}

pub fn read_map(path: &Path, obs: Option<&ObservationSet>) -> Result<MapFile> {
    let f: MapFile = read_json(path)?;
    f.validate(obs)?;
    Ok(f)
}

/// Writes through a temporary sibling and a rename, so a failed run never
/// leaves a truncated file behind.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    std::fs::write(&tmp, text)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &to_json(value)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{MatchEdge, Support};
    use crate::pipeline::reconstruct;
    use crate::registration::RansacConfig;
    use crate::synth::generate;

    fn small_scene() -> (SceneSpec, GroundTruth, ObservationSet) {
        let spec = SceneSpec {
            n_views: 8,
            noise_px: 0.5,
            seed: 3,
            ..SceneSpec::default()
        };
        let (gt, obs) = generate(&spec).unwrap();
        (spec, gt, obs)
    }

    #[test]
    fn observation_round_trip_is_byte_stable() {
        let (_, _, obs) = small_scene();
        let text = to_json(&ObservationFile::new(obs.clone())).unwrap();
        let back: ObservationFile = from_json(&text).unwrap();
        back.validate().unwrap();
        assert_eq!(to_json(&back).unwrap(), text);
        assert_eq!(back.into_observations(), obs);
    }

    #[test]
    fn ground_truth_round_trip_is_byte_stable() {
        let (spec, gt, _) = small_scene();
        let text = to_json(&GroundTruthFile::new(spec, gt.clone())).unwrap();
        let back: GroundTruthFile = from_json(&text).unwrap();
        back.validate().unwrap();
        assert_eq!(to_json(&back).unwrap(), text);
        assert_eq!(back.truth, gt);
    }

    #[test]
    fn map_round_trip_is_identity() {
        let (_, _, obs) = small_scene();
        let mut cfg = PipelineConfig::default();
        cfg.bootstrap.min_inliers = 20;
        let rec = reconstruct(&obs, &cfg).unwrap();
        let file = MapFile::new(rec.map, rec.trace);
        file.validate(Some(&obs)).unwrap();
        let text = to_json(&file).unwrap();
        let back: MapFile = from_json(&text).unwrap();
        assert_eq!(back, file);
        assert_eq!(to_json(&back).unwrap(), text);
    }

    #[test]
    fn version_is_required_and_checked() {
        let (_, _, obs) = small_scene();
        let mut f = ObservationFile::new(obs);
        f.format_version = 2;
        assert!(matches!(f.validate(), Err(Error::Parse(_))));
        let missing = r#"{"images": [], "matches": {"points": [], "lines": [], "vps": []}}"#;
        assert!(matches!(from_json::<ObservationFile>(missing), Err(Error::Parse(_))));
    }

    #[test]
    fn dangling_match_is_rejected() {
        let (_, _, obs) = small_scene();
        let mut f = ObservationFile::new(obs);
        let n = f.images[0].keypoints.len() as u32;
        f.matches.points.add(FeatureRef::new(0, n), FeatureRef::new(1, 0), 1.0);
        assert!(matches!(f.validate(), Err(Error::Parse(_))));
    }

    #[test]
    fn duplicate_view_is_rejected() {
        let (_, _, obs) = small_scene();
        let mut f = ObservationFile::new(obs);
        let dup = f.images[0].clone();
        f.images.push(dup);
        assert!(matches!(f.validate(), Err(Error::Parse(_))));
    }

    #[test]
    fn map_support_must_resolve() {
        let (_, _, obs) = small_scene();
        let mut cfg = PipelineConfig::default();
        cfg.bootstrap.min_inliers = 20;
        let rec = reconstruct(&obs, &cfg).unwrap();
        let mut f = MapFile::new(rec.map, vec![]);
        let id = *f.map.points.keys().next().unwrap();
        f.map.points.get_mut(&id).unwrap().supports.push(Support::new(FeatureRef::new(0, 1_000_000)));
        assert!(f.validate(None).is_ok());
        assert!(matches!(f.validate(Some(&obs)), Err(Error::Parse(_))));
        f.map.points.get_mut(&id).unwrap().supports.push(Support::new(FeatureRef::new(999, 0)));
        assert!(matches!(f.validate(None), Err(Error::Parse(_))));
    }

    #[test]
    fn malformed_text_is_a_parse_error() {
        assert!(matches!(from_json::<MapFile>("{ not json"), Err(Error::Parse(_))));
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(read_observations(&dir.path().join("absent.json")), Err(Error::Parse(_))));
    }

    #[test]
    fn edges_serialize_in_canonical_order() {
        let mut g = crate::model::Graph::default();
        g.add(FeatureRef::new(2, 0), FeatureRef::new(1, 5), 0.5);
        g.add(FeatureRef::new(0, 1), FeatureRef::new(1, 0), 0.25);
        let v: Vec<MatchEdge> = from_json(&to_json(&g).unwrap()).unwrap();
        assert!(v.windows(2).all(|w| w[0].a < w[1].a));
        assert!(v.iter().all(|e| e.a < e.b));
    }

    #[test]
    fn empty_config_means_defaults() {
        let c: RunConfig = from_json("{}").unwrap();
        assert_eq!(c, RunConfig::default());
        let c: RunConfig = from_json(r#"{"pipeline": {"ransac": {"seed": 7}}}"#).unwrap();
        assert_eq!(c.pipeline.ransac.seed, 7);
        assert_eq!(c.pipeline.ransac.max_iterations, RansacConfig::default().max_iterations);
    }
}
