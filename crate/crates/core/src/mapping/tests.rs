use nalgebra::{Matrix3, Vector2, Vector3};
use proptest::prelude::*;

use super::*;
use crate::geom::{Intrinsics, Segment2, Segment3};
use crate::model::{FeatureRef, Graph, ImageObservations, MatchGraph, Support, VpDetection};
use crate::synth::{generate, SceneSpec};

fn k() -> Intrinsics<f64> {
    Intrinsics::new(500.0, 500.0, 320.0, 240.0)
}

fn origin_view(id: u32) -> View {
    View::new(id, k(), Matrix3::identity(), Vector3::zeros()).unwrap()
}

/// Projects to the image row v = 240, columns 220 to 420.
fn horizontal_segment() -> Segment3<f64> {
    Segment3::from_endpoints(Vector3::new(-1.0, 0.0, 5.0), Vector3::new(1.0, 0.0, 5.0)).unwrap()
}

fn det(a: (f64, f64), b: (f64, f64)) -> Segment2<f64> {
    Segment2::new(Vector2::new(a.0, a.1), Vector2::new(b.0, b.1)).unwrap()
}

fn score_at_offset(d: f64) -> LineScore {
    line_score(&origin_view(0), &horizontal_segment(), &det((250.0, 240.0 + d), (390.0, 240.0 + d)), &MappingConfig::default()).unwrap()
}

/// A 20 px detection through the principal point, rotated by `deg`.
fn score_at_angle(deg: f64) -> LineScore {
    let (s, c) = deg.to_radians().sin_cos();
    let h = 10.0;
    let d = det((320.0 - h * c, 240.0 - h * s), (320.0 + h * c, 240.0 + h * s));
    line_score(&origin_view(0), &horizontal_segment(), &d, &MappingConfig::default()).unwrap()
}

#[test]
fn perpendicular_gate_is_two_pixels() {
    assert_eq!(TAU_P_PX, 2.0);
    let cfg = MappingConfig::default();
    assert!((score_at_offset(1.99).d_perp - 1.99).abs() < 1e-9);
    assert!(score_at_offset(1.99).accepted(&cfg));
    assert!(!score_at_offset(2.01).within_gates(&cfg));
    assert!(!score_at_offset(2.0).within_gates(&cfg));
}

#[test]
fn angular_gate_is_five_degrees() {
    assert_eq!(TAU_A_DEG, 5.0);
    let cfg = MappingConfig::default();
    let inside = score_at_angle(4.95);
    assert!((inside.d_ang - 4.95).abs() < 1e-9);
    assert!(inside.d_perp < cfg.tau_p_px);
    assert!(inside.accepted(&cfg));
    assert!(!score_at_angle(5.05).within_gates(&cfg));
}

#[test]
fn score_is_the_worse_of_both_exponentials() {
    let s = score_at_offset(1.0);
    assert!((s.score - (-0.5f64).exp()).abs() < 1e-9);
    let s = score_at_angle(2.5);
    assert!((s.score - (-0.5f64).exp()).abs() < 1e-6);
}

#[test]
fn retriangulation_length_is_one_hundred_pixels() {
    assert_eq!(RETRIANGULATE_MIN_LENGTH_PX, 100.0);
    let cfg = MappingConfig::default();
    assert!(!creates_first(100.0, &cfg));
    assert!(creates_first(100.01, &cfg));
    assert!(!creates_first(99.99, &cfg));
}

#[test]
fn lines_start_at_the_fourth_view() {
    assert_eq!(LINE_START_VIEWS, 4);
    let mut map = Map::default();
    for id in 0..3 {
        map.register(origin_view(id));
        assert!(line_views(&map, id, LINE_START_VIEWS).is_empty());
    }
    map.register(origin_view(3));
    assert_eq!(line_views(&map, 3, LINE_START_VIEWS), vec![0, 1, 2, 3]);
    map.register(origin_view(4));
    assert_eq!(line_views(&map, 4, LINE_START_VIEWS), vec![4]);
}

fn vp_image(view_id: u32, d: Vector3<f64>, n_lines: usize) -> ImageObservations {
    let seg = det((0.0, 0.0), (10.0, 0.0));
    ImageObservations {
        view_id,
        intrinsics: k(),
        keypoints: vec![],
        segments: vec![seg; n_lines],
        vps: vec![VpDetection {
            direction: k().matrix() * d,
            line_ids: (0..n_lines as u32).collect(),
        }],
    }
}

/// Continue of a detection at `deg` from a one-support VP track.
fn vp_continue_at(deg: f64) -> Option<TrackId> {
    let (s, c) = deg.to_radians().sin_cos();
    let mut obs = ObservationSet {
        images: vec![vp_image(0, Vector3::x(), 0), vp_image(1, Vector3::new(c, s, 0.0), 0)],
        matches: MatchGraph::default(),
    };
    obs.matches.vps.add(FeatureRef::new(0, 0), FeatureRef::new(1, 0), 1.0);
    let mut map = Map::default();
    map.register(origin_view(0));
    map.register(origin_view(1));
    let id = map.allocate_id();
    map.vps.insert(
        id,
        VpTrack {
            direction: Vector3::x(),
            supports: vec![Support::new(FeatureRef::new(0, 0))],
        },
    );
    vp_continue(&mut map, &obs, &MappingConfig::default(), 1, 0)
}

#[test]
fn vp_gate_is_three_degrees() {
    assert_eq!(VP_GATE_DEG, 3.0);
    assert!(vp_continue_at(2.95).is_some());
    assert!(vp_continue_at(3.05).is_none());
}

fn vp_matches_with_shared(n: usize) -> Graph {
    let images = vec![vp_image(0, Vector3::x(), 10), vp_image(1, Vector3::x(), 10)];
    let mut lines = Graph::default();
    for i in 0..n as u32 {
        lines.add(FeatureRef::new(0, i), FeatureRef::new(1, i), 1.0);
    }
    derive_vp_matches(&images, &lines)
}

#[test]
fn vp_match_needs_five_shared_line_matches() {
    assert_eq!(VP_MIN_LINE_MATCHES, 5);
    assert!(vp_matches_with_shared(4).is_empty());
    let g = vp_matches_with_shared(5);
    assert!(g.contains(&FeatureRef::new(0, 0), &FeatureRef::new(1, 0)));
    assert_eq!(g.edges()[0].score, 5.0);
}

#[test]
fn unregistered_view_is_rejected() {
    let mut map = Map::default();
    let obs = ObservationSet::default();
    assert_eq!(incremental_step(&mut map, &obs, &MappingConfig::default(), 0), Err(Error::ViewNotRegistered(0)));
}

/// Noise-free scene with true poses: every track is exact, no feature is
/// claimed twice, and each delta replays onto the previous map.
#[test]
fn exact_scene_builds_exact_tracks() {
    let spec = SceneSpec {
        n_views: 8,
        seed: 5,
        ..SceneSpec::default()
    };
    let (gt, obs) = generate(&spec).unwrap();
    let cfg = MappingConfig::default();
    let mut map = Map::default();
    for v in &gt.views {
        map.register(v.clone());
        let before = map.clone();
        let delta = incremental_step(&mut map, &obs, &cfg, v.view_id).unwrap();
        let mut replay = before;
        delta.apply(&mut replay);
        assert_eq!(replay, map);
    }
    assert!(map.supports_unique());
    assert!(map.points.len() > 100);
    assert!(map.lines.len() > 20, "{} lines", map.lines.len());
    assert!(!map.vps.is_empty());
    for t in map.points.values() {
        assert!(crate::synth::eval::point_track_error(&t.point, &gt) < 1e-6);
    }
    for t in map.lines.values() {
        assert!(crate::synth::eval::line_track_error(&t.segment, &gt) < 1e-6);
        assert!(t.active_count() >= 2);
    }
    for t in map.vps.values() {
        let best = gt.vp_directions.iter().map(|d| vps::direction_angle(d, &t.direction)).fold(f64::INFINITY, f64::min);
        assert!(best < 1e-6);
    }
}

#[test]
fn disabled_categories_stay_empty() {
    let spec = SceneSpec {
        n_views: 6,
        ..SceneSpec::default()
    };
    let (gt, obs) = generate(&spec).unwrap();
    let cfg = MappingConfig {
        enable_lines: false,
        enable_vps: false,
        ..MappingConfig::default()
    };
    let mut map = Map::default();
    for v in &gt.views {
        map.register(v.clone());
        incremental_step(&mut map, &obs, &cfg, v.view_id).unwrap();
    }
    assert!(map.lines.is_empty() && map.vps.is_empty());
    assert!(!map.points.is_empty());
}

proptest! {
    #[test]
    fn accepted_implies_gates(d in 0.0f64..4.0, ang in 0.0f64..10.0) {
        let cfg = MappingConfig::default();
        for s in [score_at_offset(d), score_at_angle(ang)] {
            prop_assert!(s.score > 0.0 && s.score <= 1.0);
            if s.accepted(&cfg) {
                prop_assert!(s.d_perp < cfg.tau_p_px && s.d_ang < cfg.tau_a_deg);
            }
        }
    }
}
