//! Incremental reconstruction: bootstrap from an initial pair, then
//! register, triangulate and refine one view at a time. Also the
//! known-pose triangulation mode.

pub mod bootstrap;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub use bootstrap::{bootstrap_pair_selection, relative_pose, BootstrapConfig, InitialPair, RelativePose};

use crate::error::{Error, Result};
use crate::mapping::{incremental_step, MapDelta, MappingConfig};
use crate::model::{Category, FeatureRef, Map, ObservationSet, View};
use crate::refine::{classify_reliability, global_ba, local_ba, two_step_refine, RefineConfig, TrackSet};
use crate::registration::{collect_correspondences, register, CorrespondenceOptions, RansacConfig, SolverStats};

/// Every module configuration; each section falls back to its defaults.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub mapping: MappingConfig,
    pub refine: RefineConfig,
    pub ransac: RansacConfig,
    pub correspondences: CorrespondenceOptions,
    pub bootstrap: BootstrapConfig,
    pub schedule: ScheduleConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    /// Global refinement after this many registrations.
    pub global_every: usize,
    /// Registration attempts per view before it is given up.
    pub max_attempts: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            global_every: 10,
            max_attempts: 3,
        }
    }
}

impl PipelineConfig {
    /// Lines and vanishing points off everywhere.
    pub fn points_only(mut self) -> Self {
        self.mapping.enable_lines = false;
        self.mapping.enable_vps = false;
        self.correspondences.use_lines = false;
        self.correspondences.use_vps = false;
        self
    }

    /// Seeds every randomized stage from one value.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.ransac.seed = seed;
        self.bootstrap.seed = seed;
        self
    }

    fn lines_on(&self) -> bool {
        self.mapping.enable_lines
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    Bootstrap,
    Register,
    GlobalRefine,
    Triangulate,
    /// Covariances and reliability recomputed on a finished map.
    Uncertainty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationSummary {
    /// Inliers as (points, lines, vps).
    pub inliers: [usize; 3],
    pub correspondences: [usize; 3],
    pub iterations: usize,
    pub solvers: Vec<SolverStats>,
}

/// One pipeline step. Applying the deltas in order to an empty map
/// reproduces the final map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub kind: StepKind,
    pub view_id: Option<u32>,
    pub registration: Option<RegistrationSummary>,
    pub delta: MapDelta,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Reconstruction {
    pub map: Map,
    pub trace: Vec<TraceStep>,
    /// Views that could not be registered.
    pub failed: Vec<u32>,
}

impl Reconstruction {
    fn record(&mut self, kind: StepKind, view_id: Option<u32>, registration: Option<RegistrationSummary>, before: &Map, merged: Vec<(Category, u32, u32)>) {
        let delta = MapDelta::between(view_id.unwrap_or(u32::MAX), before, &self.map, merged);
        self.trace.push(TraceStep {
            kind,
            view_id,
            registration,
            delta,
        });
    }

    /// The map rebuilt from the trace alone.
    pub fn replay(trace: &[TraceStep]) -> Map {
        let mut map = Map::default();
        for s in trace {
            s.delta.apply(&mut map);
        }
        map
    }
}

/// Number of features of `view_id` matched to tracks of the index.
fn link_count(index: &BTreeMap<FeatureRef, u32>, obs: &ObservationSet, c: Category, view_id: u32, n: usize) -> usize {
    let g = obs.matches.get(c);
    (0..n as u32)
        .filter(|f| g.neighbors(&FeatureRef::new(view_id, *f)).any(|(nb, _)| index.contains_key(&nb)))
        .count()
}

/// Unregistered views ordered by how many of their features link to the
/// map, most first.
fn next_views(map: &Map, obs: &ObservationSet, cfg: &PipelineConfig, skip: &BTreeSet<u32>) -> Vec<u32> {
    let pi = map.feature_index(Category::Point);
    let li = map.feature_index(Category::Line);
    let mut scored: Vec<(usize, u32)> = obs
        .images
        .iter()
        .filter(|i| !map.is_registered(i.view_id) && !skip.contains(&i.view_id))
        .map(|i| {
            let mut n = link_count(&pi, obs, Category::Point, i.view_id, i.keypoints.len());
            if cfg.lines_on() && cfg.correspondences.use_lines {
                n += link_count(&li, obs, Category::Line, i.view_id, i.segments.len());
            }
            (n, i.view_id)
        })
        .filter(|(n, _)| *n > 0)
        .collect();
    scored.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    scored.into_iter().map(|(_, v)| v).collect()
}

fn validate(obs: &ObservationSet) -> Result<()> {
    let mut ids = BTreeSet::new();
    for i in &obs.images {
        if !ids.insert(i.view_id) {
            return Err(Error::Parse(format!("duplicate view id {}", i.view_id)));
        }
    }
    Ok(())
}

/// Full incremental reconstruction.
pub fn reconstruct(obs: &ObservationSet, cfg: &PipelineConfig) -> Result<Reconstruction> {
    validate(obs)?;
    let pair = bootstrap_pair_selection(obs, &cfg.bootstrap)?;
    let (va, vb) = bootstrap::initial_views(obs, &pair)?;
    let mut rec = Reconstruction::default();

    let before = rec.map.clone();
    rec.map.register(va);
    rec.map.register(vb);
    let delta = incremental_step(&mut rec.map, obs, &cfg.mapping, pair.view_b)?;
    global_ba(&mut rec.map, obs, &cfg.refine)?;
    rec.record(StepKind::Bootstrap, Some(pair.view_b), None, &before, delta.merged);

    let mut attempts: BTreeMap<u32, usize> = BTreeMap::new();
    // Registered count when each view last failed; retried once the map grew.
    let mut failed_at: BTreeMap<u32, usize> = BTreeMap::new();
    let mut since_global = 0;
    loop {
        let n_reg = rec.map.order.len();
        let skip: BTreeSet<u32> = obs
            .images
            .iter()
            .map(|i| i.view_id)
            .filter(|v| {
                attempts.get(v).is_some_and(|a| *a >= cfg.schedule.max_attempts) || failed_at.get(v).is_some_and(|n| *n == n_reg)
            })
            .collect();
        let candidates = next_views(&rec.map, obs, cfg, &skip);
        let mut registered = false;
        for v in candidates {
            let corrs = collect_correspondences(&rec.map, obs, v, &cfg.correspondences)?;
            let result = match register(&corrs, &cfg.ransac) {
                Ok(r) => r,
                Err(Error::NotEnoughCorrespondences) => {
                    failed_at.insert(v, n_reg);
                    continue;
                }
                Err(e) => return Err(e),
            };
            *attempts.entry(v).or_default() += 1;
            if !result.success {
                log::debug!("view {v}: registration failed with inliers {:?}", result.inlier_counts());
                failed_at.insert(v, n_reg);
                continue;
            }
            let summary = RegistrationSummary {
                inliers: result.inlier_counts(),
                correspondences: [corrs.points.len(), corrs.lines.len(), corrs.vps.len()],
                iterations: result.iterations,
                solvers: result.solvers.clone(),
            };
            log::info!("view {v}: registered with inliers {:?}", summary.inliers);
            let before = rec.map.clone();
            let k = corrs.intrinsics;
            rec.map.register(View::new(v, k, result.pose.rotation, result.pose.translation)?);
            let delta = incremental_step(&mut rec.map, obs, &cfg.mapping, v)?;
            since_global += 1;
            if since_global >= cfg.schedule.global_every {
                global_ba(&mut rec.map, obs, &cfg.refine)?;
                since_global = 0;
            } else {
                local_ba(&mut rec.map, obs, &cfg.refine)?;
            }
            rec.record(StepKind::Register, Some(v), Some(summary), &before, delta.merged);
            registered = true;
            break;
        }
        if !registered {
            break;
        }
    }
    let before = rec.map.clone();
    global_ba(&mut rec.map, obs, &cfg.refine)?;
    rec.record(StepKind::GlobalRefine, None, None, &before, vec![]);
    rec.failed = obs.images.iter().map(|i| i.view_id).filter(|v| !rec.map.is_registered(*v)).collect();
    Ok(rec)
}

/// Map building with known, fixed poses: views are added in the given
/// order, each followed by structure-only refinement of its co-visible
/// tracks.
pub fn triangulate(obs: &ObservationSet, views: &[View], cfg: &PipelineConfig) -> Result<Reconstruction> {
    validate(obs)?;
    let mut rec = Reconstruction::default();
    for v in views {
        if obs.image(v.view_id).is_none() {
            return Err(Error::Parse(format!("no observations for view {}", v.view_id)));
        }
        let before = rec.map.clone();
        rec.map.register(v.clone());
        let delta = incremental_step(&mut rec.map, obs, &cfg.mapping, v.view_id)?;
        let window: BTreeSet<u32> = [v.view_id].into();
        let tracks = TrackSet::covisible(&rec.map, &window);
        two_step_refine(&mut rec.map, obs, &cfg.refine, &tracks, BTreeSet::new(), None)?;
        rec.record(StepKind::Triangulate, Some(v.view_id), None, &before, delta.merged);
    }
    let before = rec.map.clone();
    let tracks = TrackSet::all(&rec.map);
    two_step_refine(&mut rec.map, obs, &cfg.refine, &tracks, BTreeSet::new(), None)?;
    rec.record(StepKind::GlobalRefine, None, None, &before, vec![]);
    Ok(rec)
}

/// Recomputes covariance, pixel-scale uncertainty and reliability of every
/// track of a finished map, returning the step that records the change.
pub fn compute_uncertainties(map: &mut Map, obs: &ObservationSet, cfg: &RefineConfig) -> TraceStep {
    let before = map.clone();
    classify_reliability(map, obs, cfg, None);
    TraceStep {
        kind: StepKind::Uncertainty,
        view_id: None,
        registration: None,
        delta: MapDelta::between(u32::MAX, &before, map, vec![]),
    }
}
