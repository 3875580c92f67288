use nalgebra::{Rotation3, Vector3};

use hsfm::mapping::MappingConfig;
use hsfm::model::{FeatureRef, ObservationSet};
use hsfm::pipeline::{bootstrap_pair_selection, compute_uncertainties, reconstruct, triangulate, BootstrapConfig, PipelineConfig, Reconstruction};
use hsfm::refine::{line_uncertainty_in_place, point_uncertainty};
use hsfm::synth::eval::{line_track_error, point_track_error};
use hsfm::synth::{evaluate_poses, generate, PoseThresholds, SceneSpec, Similarity};
use hsfm::Error;

fn scene(n_views: usize, noise_px: f64, seed: u64) -> (hsfm::synth::GroundTruth, ObservationSet) {
    generate(&SceneSpec {
        n_views,
        noise_px,
        seed,
        ..SceneSpec::default()
    })
    .unwrap()
}

#[test]
fn noise_free_box_reconstructs_exactly() {
    let (gt, obs) = scene(20, 0.0, 0);
    let rec = reconstruct(&obs, &PipelineConfig::default()).unwrap();
    assert!(rec.failed.is_empty());
    assert_eq!(rec.map.order.len(), 20);
    let m = evaluate_poses(&rec.map.views, &gt, &PoseThresholds::default()).unwrap();
    assert_eq!(m.valid_fraction, 1.0);
    assert!(m.rmse_translation < 1e-6, "rmse {}", m.rmse_translation);
}

#[test]
fn trace_replays_to_the_live_map() {
    let (_, obs) = scene(10, 0.5, 1);
    let rec = reconstruct(&obs, &PipelineConfig::default()).unwrap();
    assert_eq!(Reconstruction::replay(&rec.trace), rec.map);
    // Every prefix replays to a consistent map too.
    let half = Reconstruction::replay(&rec.trace[..rec.trace.len() / 2]);
    assert!(half.order.iter().all(|v| half.views.contains_key(v)));
    assert!(half.order.len() < rec.map.order.len());
}

#[test]
fn reconstruction_is_deterministic() {
    let (_, obs) = scene(8, 1.0, 2);
    let cfg = PipelineConfig::default().with_seed(9);
    let a = reconstruct(&obs, &cfg).unwrap();
    let b = reconstruct(&obs, &cfg).unwrap();
    assert_eq!(a, b);
}

#[test]
fn identical_poses_have_no_valid_pair() {
    let (_, mut obs) = scene(2, 0.0, 3);
    let mut copy = obs.images[0].clone();
    copy.view_id = 1;
    obs.images[1] = copy;
    obs.matches = Default::default();
    for f in 0..obs.images[0].keypoints.len() as u32 {
        obs.matches.points.add(FeatureRef::new(0, f), FeatureRef::new(1, f), 1.0);
    }
    let cfg = BootstrapConfig::default();
    assert_eq!(bootstrap_pair_selection(&obs, &cfg).unwrap_err(), Error::NoValidPair);
    assert_eq!(reconstruct(&obs, &PipelineConfig::default()).unwrap_err(), Error::NoValidPair);
}

#[test]
fn orbit_pair_has_enough_baseline() {
    let (gt, obs) = scene(12, 0.5, 4);
    let cfg = BootstrapConfig::default();
    let pair = bootstrap_pair_selection(&obs, &cfg).unwrap();
    assert!(pair.relative.median_angle_deg > 2.0);
    assert!(pair.relative.inliers.len() >= cfg.min_inliers);
    // Relative rotation agrees with the truth.
    let (a, b) = (gt.view(pair.view_a), gt.view(pair.view_b));
    let r = b.rotation * a.rotation.transpose();
    let err = hsfm::synth::eval::rotation_error_deg(&r, &pair.relative.pose.rotation);
    // The initial pair has a short baseline; BA tightens this later.
    assert!(err < 2.0, "relative rotation off by {err} deg");
    assert_eq!(bootstrap_pair_selection(&obs, &cfg).unwrap(), pair);
}

#[test]
fn baseline_gate_is_strict() {
    let (_, obs) = scene(12, 0.5, 4);
    let cfg = BootstrapConfig::default();
    let pair = bootstrap_pair_selection(&obs, &cfg).unwrap();
    let tight = BootstrapConfig {
        min_median_angle_deg: pair.relative.median_angle_deg,
        ..cfg.clone()
    };
    let next = bootstrap_pair_selection(&obs, &tight);
    assert!(next.map_or(true, |p| p.relative.median_angle_deg > pair.relative.median_angle_deg));
}

#[test]
fn known_pose_triangulation_is_exact_without_noise() {
    let (gt, obs) = scene(10, 0.0, 5);
    let rec = triangulate(&obs, &gt.views, &PipelineConfig::default()).unwrap();
    assert_eq!(rec.map.order.len(), 10);
    for v in rec.map.views.values() {
        assert_eq!(*v, *gt.view(v.view_id));
    }
    assert!(rec.map.points.values().all(|t| point_track_error(&t.point, &gt) < 1e-6));
    assert!(!rec.map.lines.is_empty());
    assert!(rec.map.lines.values().all(|t| line_track_error(&t.segment, &gt) < 1e-6));
    assert_eq!(Reconstruction::replay(&rec.trace), rec.map);
}

#[test]
fn points_only_config_builds_no_lines() {
    let (_, obs) = scene(8, 0.5, 6);
    let rec = reconstruct(&obs, &PipelineConfig::default().points_only()).unwrap();
    assert!(rec.map.lines.is_empty() && rec.map.vps.is_empty());
    assert!(!rec.map.points.is_empty());
    assert!(rec.trace.iter().filter_map(|s| s.registration.as_ref()).all(|r| r.inliers[1] == 0));
}

#[test]
fn line_start_is_configurable() {
    let (gt, obs) = scene(6, 0.0, 7);
    let mut cfg = PipelineConfig::default();
    cfg.mapping = MappingConfig {
        line_start_views: 6,
        ..MappingConfig::default()
    };
    let rec = triangulate(&obs, &gt.views[..5], &cfg).unwrap();
    assert!(rec.map.lines.is_empty());
    let rec = triangulate(&obs, &gt.views, &cfg).unwrap();
    assert!(!rec.map.lines.is_empty());
}

/// Pixel-scale uncertainty does not change under a similarity with scale
/// 10 applied to poses and structure.
#[test]
fn sigma_px_is_similarity_invariant() {
    let (_, obs) = scene(10, 1.0, 8);
    let rec = reconstruct(&obs, &PipelineConfig::default()).unwrap();
    let cfg = PipelineConfig::default().refine;
    let kernel = cfg.line_kernel();
    let mut map = rec.map;
    let step = compute_uncertainties(&mut map, &obs, &cfg);
    assert!(step.delta.registered.is_empty());
    let sim = Similarity {
        scale: 10.0,
        rotation: *Rotation3::from_euler_angles(0.3, -0.7, 1.1).matrix(),
        translation: Vector3::new(4.0, -2.0, 7.0),
    };
    let moved = sim.apply_map(&map).unwrap();
    let rel = |a: f64, b: f64| (a - b).abs() / a.max(1.0);
    let mut n = 0;
    for (id, t) in &map.lines {
        let Some(a) = t.sigma_px else { continue };
        // Same geometry, so no re-optimization: only the propagation runs.
        let mut m = moved.lines[id].clone();
        line_uncertainty_in_place(&mut m, &moved.views, &obs, &kernel).unwrap();
        let b = m.sigma_px.unwrap();
        assert!(rel(a, b) <= 1e-9, "line {id}: {a} vs {b}");
        n += 1;
    }
    for (id, t) in &map.points {
        let Some(a) = t.sigma_px else { continue };
        let mut m = moved.points[id].clone();
        point_uncertainty(&mut m, &moved.views, &obs).unwrap();
        let b = m.sigma_px.unwrap();
        assert!(rel(a, b) <= 1e-9, "point {id}: {a} vs {b}");
    }
    assert!(n > 10);
}
