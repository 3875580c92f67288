//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Runs without the libtest harness so the report always
//! prints.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use nalgebra::{DVector, Matrix3, Rotation3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use hsfm::geom::{triangulate_point_multiview, CameraView, Intrinsics, Segment2, Segment3};
use hsfm::mapping::{
    creates_first, derive_vp_matches, line_score, line_views, vp_continue, LineScore, MappingConfig,
    LINE_START_VIEWS, RETRIANGULATE_MIN_LENGTH_PX, TAU_A_DEG, TAU_P_PX, VP_GATE_DEG, VP_MIN_LINE_MATCHES,
};
use hsfm::model::{FeatureRef, Graph, ImageObservations, Map, MatchGraph, ObservationSet, Support, View, VpDetection, VpTrack};
use hsfm::pipeline::{compute_uncertainties, reconstruct, PipelineConfig};
use hsfm::refine::schedule::{relabel, LabelCounts, STABLE_MIN_ACTIVE};
use hsfm::refine::{line_uncertainty_in_place, optimize_line, point_uncertainty, RefineConfig};
use hsfm::residual::LineObservation;
use hsfm::robust::{Kernel, CAUCHY_PARAM};
use hsfm::solvers::*;
use hsfm::synth::eval::point_segment_distance;
use hsfm::synth::problems::in_image;
use hsfm::synth::{
    align_views, evaluate_map, evaluate_poses, fd_jacobian, generate, look_at, mc_line_covariance, mc_point_covariance,
    random_line_problem, relative_frobenius, GroundTruth, PoseThresholds, SceneSpec, Similarity,
};
use hsfm::uncertainty::{line_covariance, line_jacobian_dphi, line_phi_covariance, point_covariance, scale_invariant_sigma};

mod common;
use common::{keep, rate};

type Outcome = (bool, String);

// ---------------------------------------------------------------- 1

fn jacobian_validity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let kernel = Kernel::Cauchy(CAUCHY_PARAM);
    let (mut tracks, mut entries, mut worst) = (0, 0usize, 0.0f64);
    while tracks < 50 {
        let n = rng.random_range(4..=6);
        let p = random_line_problem(&mut rng, n, 0.5, 60.0);
        let obs = p.observations();
        let Ok(f) = optimize_line(&p.truth.line.to_ortho(), &obs, &kernel, 200, 1e-13) else { continue };
        let Ok(jac) = line_jacobian_dphi(&f.phi, &obs, &kernel) else { continue };
        tracks += 1;
        for k in 0..obs.len() {
            for e in 0..2 {
                let x0 = if e == 0 { obs[k].start } else { obs[k].end };
                let solve = |x: &DVector<f64>| {
                    let mut o: Vec<LineObservation<f64>> = obs.clone();
                    let v = Vector2::new(x[0], x[1]);
                    if e == 0 {
                        o[k].start = v;
                    } else {
                        o[k].end = v;
                    }
                    let g = optimize_line(&f.phi, &o, &kernel, 200, 1e-13).expect("re-optimization");
                    DVector::from_row_slice(&g.phi.to_array())
                };
                let fd = fd_jacobian(solve, &DVector::from_row_slice(x0.as_slice()), 1e-4);
                let an = jac[k][e];
                // Entries far below the column scale carry no information
                // at this step size; they are compared against the floor.
                let scale = an.abs().max();
                for i in 0..4 {
                    for c in 0..2 {
                        let dev = (fd[(i, c)] - an[(i, c)]).abs() / fd[(i, c)].abs().max(1e-3 * scale);
                        worst = worst.max(dev);
                        entries += 1;
                    }
                }
            }
        }
    }
    (worst < 0.01, format!("{tracks} tracks, {entries} entries, max relative deviation {:.2e}", worst))
}

// ---------------------------------------------------------------- 2

fn orthogonal_views(focal: f64) -> Vec<CameraView<f64>> {
    let k = Intrinsics::new(focal, focal, 0.0, 0.0);
    [Vector3::new(0.0, 0.0, -1.0), Vector3::new(-1.0, 0.0, 0.0)]
        .iter()
        .map(|c| {
            let (r, t) = look_at(c, &Vector3::zeros(), &Vector3::y()).unwrap();
            CameraView::new(0, k, r, t).unwrap()
        })
        .collect()
}

fn covariance_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    let (mut line_worst, mut robust_worst) = (0.0f64, 0.0f64);
    let mut t = 0;
    while t < 10 {
        let p = random_line_problem(&mut rng, 6, 1.0, 60.0);
        let obs = p.observations();
        let Ok(f) = optimize_line(&p.truth.line.to_ortho(), &obs, &Kernel::Squared, 200, 1e-12) else { continue };
        let Ok(a) = line_phi_covariance(&f.phi, &obs, &Kernel::Squared) else { continue };
        let mc = mc_line_covariance(&f.phi, &obs, &Kernel::Squared, 10_000, 1.0, t).unwrap();
        line_worst = line_worst.max(relative_frobenius(&mc.covariance, &a));
        // Informational: the robust kernel at unit noise is outside the
        // linear regime of its weights.
        let k = Kernel::Cauchy(CAUCHY_PARAM);
        if let Ok(g) = optimize_line(&f.phi, &obs, &k, 200, 1e-12) {
            if let (Ok(a), Ok(mc)) = (line_phi_covariance(&g.phi, &obs, &k), mc_line_covariance(&g.phi, &obs, &k, 2000, 1.0, t)) {
                robust_worst = robust_worst.max(relative_frobenius(&mc.covariance, &a));
            }
        }
        t += 1;
    }
    let views = orthogonal_views(1000.0);
    let mut point_worst = 0.0f64;
    for i in 0..10 {
        let x = Vector3::new(rng.random_range(-0.03..0.03), rng.random_range(-0.03..0.03), rng.random_range(-0.03..0.03));
        let obs: Vec<(&CameraView<f64>, Vector2<f64>)> = views.iter().map(|v| (v, v.project_point(&x).unwrap())).collect();
        let sigma = point_covariance(&obs, &x).unwrap();
        let mc = mc_point_covariance(&obs, 10_000, 1.0, 50 + i).unwrap();
        point_worst = point_worst.max(relative_frobenius(&mc.covariance, &sigma));
    }
    (
        line_worst < 0.1 && point_worst < 0.05,
        format!(
            "line max {:.3} (limit 0.1), point max {:.3} (limit 0.05); Cauchy at 1 px for reference {:.3}",
            line_worst, point_worst, robust_worst
        ),
    )
}

// ---------------------------------------------------------------- 3

fn unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::from_fn(|_, _| StandardNormal.sample(rng));
        let n: f64 = v.norm();
        if n > 1e-6 {
            return v / n;
        }
    }
}

fn noise(rng: &mut ChaCha8Rng, s: f64) -> Vector2<f64> {
    Vector2::from_fn(|_, _| s * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
}

/// (sigma_px, error) for one point seen by `n` views spread over `baseline_deg`.
fn point_sample(rng: &mut ChaCha8Rng, n: usize, baseline_deg: f64) -> Option<(f64, f64)> {
    let k = Intrinsics::new(500.0, 500.0, 320.0, 240.0);
    let x = unit(rng) * rng.random_range(0.0..2.0);
    let mean = unit(rng);
    let mut views = vec![];
    let mut tries = 0;
    while views.len() < n && tries < 200 {
        tries += 1;
        let perp = unit(rng).cross(&mean).normalize();
        let spread = baseline_deg.to_radians() * rng.random_range(0.0..1.0);
        let c = x + Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(perp), spread) * mean * rng.random_range(6.0..10.0);
        let target = x + Vector3::from_fn(|_, _| rng.random_range(-0.5..0.5));
        let Ok((r, t)) = look_at(&c, &target, &unit(rng)) else { continue };
        let v = CameraView::new(views.len() as u32, k, r, t).unwrap();
        match v.project_point(&x) {
            Ok(p) if in_image(&p) => views.push(v),
            _ => {}
        }
    }
    if views.len() < n {
        return None;
    }
    let obs: Vec<(&CameraView<f64>, Vector2<f64>)> =
        views.iter().map(|v| (v, v.project_point(&x).unwrap() + noise(rng, 1.0))).collect();
    let est = triangulate_point_multiview(&obs).ok()?.point;
    let cov = point_covariance(&obs, &est).ok()?;
    let vs: Vec<&CameraView<f64>> = views.iter().collect();
    let sigma = scale_invariant_sigma(&[cov], &vs, &est).ok()?;
    Some((sigma, (est - x).norm()))
}

fn line_sample(rng: &mut ChaCha8Rng, n: usize, baseline_deg: f64) -> Option<(f64, f64)> {
    let kernel = Kernel::Cauchy(CAUCHY_PARAM);
    let p = random_line_problem(rng, n, 1.0, baseline_deg);
    let obs = p.observations();
    let f = optimize_line(&p.truth.line.to_ortho(), &obs, &kernel, 200, 1e-10).ok()?;
    let s = Segment3::on_line(f.phi.to_plucker().ok()?, &p.truth.start, &p.truth.end).ok()?;
    let c = line_covariance(&f.phi, &obs, &kernel, &[s.start, s.end]).ok()?;
    let vs: Vec<&CameraView<f64>> = p.views.iter().collect();
    let sigma = scale_invariant_sigma(&c.endpoints, &vs, &s.midpoint()).ok()?;
    let err = point_segment_distance(&s.start, &p.truth).max(point_segment_distance(&s.end, &p.truth));
    Some((sigma, err))
}

/// Precision per sigma quintile at `eps`.
fn quintiles(samples: &[(f64, f64)], eps: f64) -> Vec<f64> {
    let q = samples.len() / 5;
    samples.chunks(q).take(5).map(|c| c.iter().filter(|x| x.1 < eps).count() as f64 / c.len() as f64).collect()
}

fn inversions(p: &[f64]) -> usize {
    p.windows(2).filter(|w| w[1] > w[0]).count()
}

fn uncertainty_precision() -> Outcome {
    type Sampler = fn(&mut ChaCha8Rng, usize, f64) -> Option<(f64, f64)>;
    let suites: [(&str, Sampler, (usize, usize), (f64, f64), [f64; 3]); 2] = [
        ("lines", line_sample, (3, 8), (3.0, 80.0), [0.02, 0.05, 0.1]),
        ("points", point_sample, (2, 8), (2.0, 60.0), [0.02, 0.05, 0.1]),
    ];
    let mut ok = true;
    let mut detail = vec![];
    for (i, (name, sampler, views, base, eps)) in suites.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + i as u64);
        let mut s = vec![];
        while s.len() < 500 {
            let n = rng.random_range(views.0..=views.1);
            let b = rng.random_range(base.0..base.1);
            if let Some(x) = sampler(&mut rng, n, b) {
                s.push(x);
            }
        }
        s.sort_by(|a, b| a.0.total_cmp(&b.0));
        for e in eps {
            let p = quintiles(&s, *e);
            ok &= inversions(&p) <= 1;
            let shown: Vec<String> = p.iter().map(|x| format!("{x:.2}")).collect();
            detail.push(format!("{name}@{e} [{}]", shown.join(" ")));
        }
    }
    (ok, detail.join(", "))
}

// ---------------------------------------------------------------- 4

fn solver_exactness() -> Outcome {
    let results = [
        ("p3p", rate(1, |rng, f| keep(solve_p3p(&[f.point(rng), f.point(rng), f.point(rng)])))),
        ("p2p1l", rate(2, |rng, f| keep(solve_p2p1ll(&[f.point(rng), f.point(rng)], &f.line(rng))))),
        ("p1p2l", rate(3, |rng, f| keep(solve_p1p2ll(&f.point(rng), &[f.line(rng), f.line(rng)])))),
        ("p3l", rate(4, |rng, f| keep(solve_p3ll(&[f.line(rng), f.line(rng), f.line(rng)])))),
        ("vp+2p", rate(5, |rng, f| {
            let vp = f.vp(rng);
            keep(solve_vp_2pt(&vp, &[f.point(rng), f.point(rng)]))
        })),
        ("vp+1p1l", rate(6, |rng, f| {
            let vp = f.vp(rng);
            keep(solve_vp_1pt_1line(&vp, &f.point(rng), &f.line(rng)))
        })),
    ];
    let ok = results.iter().all(|(_, (k, n))| k * 100 >= n * 99);
    let d: Vec<String> = results.iter().map(|(s, (k, n))| format!("{s} {k}/{n}")).collect();
    (ok, d.join(", "))
}

// ---------------------------------------------------------------- 5

fn texture_poor(cfg: PipelineConfig) -> PipelineConfig {
    let mut cfg = cfg;
    cfg.mapping.line_start_views = 2;
    cfg.bootstrap.min_inliers = 6;
    cfg
}

fn registered(obs: &ObservationSet, cfg: &PipelineConfig) -> usize {
    reconstruct(obs, cfg).map_or(0, |r| r.map.order.len())
}

fn end_to_end() -> Outcome {
    let spec = SceneSpec {
        n_views: 30,
        noise_px: 1.0,
        outlier_rate: hsfm::synth::OutlierRates { points: 0.3, lines: 0.3 },
        ..SceneSpec::default()
    };
    let (gt, obs) = generate(&spec).unwrap();
    let full = match reconstruct(&obs, &PipelineConfig::default()) {
        Ok(r) => evaluate_poses(&r.map.views, &gt, &PoseThresholds::default()).ok(),
        Err(_) => None,
    };
    let (valid, med) = full.map_or((0.0, f64::INFINITY), |m| (m.valid_fraction, m.median_rotation_deg));
    let poor = SceneSpec {
        max_points_per_view: Some(10),
        ..spec
    };
    let (_, obs) = generate(&poor).unwrap();
    let cfg = texture_poor(PipelineConfig::default());
    let hybrid = registered(&obs, &cfg);
    let points = registered(&obs, &cfg.clone().points_only());
    let ok = valid == 1.0 && med < 0.2 && hybrid * 10 >= poor.n_views * 9 && points < hybrid;
    (
        ok,
        format!(
            "valid {valid:.3}, median rotation {med:.3} deg; 10 points/view: hybrid {hybrid}/30, points-only {points}/30"
        ),
    )
}

// ---------------------------------------------------------------- 6

struct Run {
    precision: f64,
    recall: f64,
    rotation: f64,
}

fn run6(gt: &GroundTruth, obs: &ObservationSet, cfg: &PipelineConfig) -> hsfm::Result<Run> {
    let rec = reconstruct(obs, cfg)?;
    let pm = evaluate_poses(&rec.map.views, gt, &PoseThresholds::default())?;
    let sim = align_views(&rec.map.views, gt, 0.05 * gt.diameter, 0)?;
    let mm = evaluate_map(&sim.apply_map(&rec.map)?, gt, &[0.1], 4);
    Ok(Run {
        precision: mm.rows[0].line_precision,
        recall: mm.rows[0].line_recall,
        rotation: pm.median_rotation_deg,
    })
}

fn caching_effect() -> Outcome {
    let spec = SceneSpec {
        n_views: 20,
        noise_px: 1.0,
        outlier_rate: hsfm::synth::OutlierRates { points: 0.3, lines: 0.3 },
        unstable_lines: 60,
        ..SceneSpec::default()
    };
    let (gt, obs) = generate(&spec).unwrap();
    let base = PipelineConfig::default();
    let mut naive = base.clone();
    naive.refine.cache_inactive_supports = false;
    naive.refine.two_step = false;
    let (Ok(d), Ok(n), Ok(p)) = (run6(&gt, &obs, &base), run6(&gt, &obs, &naive), run6(&gt, &obs, &base.clone().points_only()))
    else {
        return (false, "a reconstruction failed".into());
    };
    let ratio = d.recall / n.recall;
    let equal_precision = (d.precision - n.precision).abs() <= 0.05;
    let ok = ratio >= 1.2 && equal_precision && d.rotation <= p.rotation;
    (
        ok,
        format!(
            "recall@0.1 {:.3} vs naive {:.3} (ratio {:.2}, need 1.20), precision {:.3} vs {:.3}; median rotation {:.3} vs points-only {:.3} deg",
            d.recall, n.recall, ratio, d.precision, n.precision, d.rotation, p.rotation
        ),
    )
}

// ---------------------------------------------------------------- 7

fn hsfm_cli(dir: &Path, args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_hsfm"))
        .arg("--output")
        .arg(dir)
        .args(args)
        .output()
        .is_ok_and(|o| o.status.success())
}

fn run_cli(root: &Path, config: &str) -> Option<Vec<(String, Vec<u8>)>> {
    let d = |s: &str| root.join(s);
    let p = |s: &str, f: &str| d(s).join(f).to_string_lossy().into_owned();
    let seed = ["--config", config, "--seed", "11"];
    let commands: Vec<(&str, Vec<String>)> = vec![
        ("synth", vec!["synth".into()]),
        ("tri", vec!["triangulate".into(), "--observations".into(), p("synth", "observations.json"), "--truth".into(), p("synth", "ground_truth.json")]),
        ("rec", vec!["reconstruct".into(), "--observations".into(), p("synth", "observations.json")]),
        ("cov", vec!["covariance".into(), "--observations".into(), p("synth", "observations.json"), "--map".into(), p("rec", "map.json")]),
        ("reg", vec!["register".into(), "--observations".into(), p("synth", "observations.json"), "--map".into(), p("tri", "map.json"), "--view".into(), "4".into()]),
        ("eval", vec!["eval".into(), "--map".into(), p("cov", "map.json"), "--truth".into(), p("synth", "ground_truth.json")]),
    ];
    let mut out = vec![];
    for (dir, args) in &commands {
        let mut a: Vec<&str> = seed.to_vec();
        a.extend(args.iter().map(String::as_str));
        if !hsfm_cli(&d(dir), &a) {
            return None;
        }
        let mut files: Vec<_> = std::fs::read_dir(d(dir)).ok()?.map(|e| e.unwrap().path()).collect();
        files.sort();
        for f in files {
            out.push((format!("{dir}/{}", f.file_name()?.to_string_lossy()), std::fs::read(&f).ok()?));
        }
    }
    Some(out)
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("config.json");
    std::fs::write(&config, r#"{ "scene": { "n_views": 8, "noise_px": 1.0, "n_points": 200, "n_lines": 80 } }"#).unwrap();
    let c = config.to_string_lossy().into_owned();
    let (Some(a), Some(b)) = (run_cli(&tmp.path().join("a"), &c), run_cli(&tmp.path().join("b"), &c)) else {
        return (false, "a command failed".into());
    };
    let same = a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x == y);
    let bytes: usize = a.iter().map(|f| f.1.len()).sum();
    (same, format!("6 commands, {} files, {} bytes compared", a.len(), bytes))
}

// ---------------------------------------------------------------- 8

fn scale_invariance() -> Outcome {
    let mut worst = 0.0f64;
    let mut n = 0;
    for seed in [8, 9, 10] {
        let spec = SceneSpec {
            n_views: 10,
            noise_px: 1.0,
            seed,
            ..SceneSpec::default()
        };
        let (_, obs) = generate(&spec).unwrap();
        let Ok(rec) = reconstruct(&obs, &PipelineConfig::default()) else {
            return (false, format!("seed {seed}: reconstruction failed"));
        };
        let cfg = RefineConfig::default();
        let kernel = cfg.line_kernel();
        let mut map = rec.map;
        compute_uncertainties(&mut map, &obs, &cfg);
        let sim = Similarity {
            scale: 10.0,
            rotation: *Rotation3::from_euler_angles(0.3, -0.7, 1.1).matrix(),
            translation: Vector3::new(4.0, -2.0, 7.0),
        };
        let moved = sim.apply_map(&map).unwrap();
        let rel = |a: f64, b: f64| (a - b).abs() / a.max(1.0);
        for (id, t) in &map.lines {
            let Some(a) = t.sigma_px else { continue };
            let mut m = moved.lines[id].clone();
            let b = line_uncertainty_in_place(&mut m, &moved.views, &obs, &kernel).ok().and(m.sigma_px);
            worst = worst.max(b.map_or(f64::INFINITY, |b| rel(a, b)));
            n += 1;
        }
        for (id, t) in &map.points {
            let Some(a) = t.sigma_px else { continue };
            let mut m = moved.points[id].clone();
            let b = point_uncertainty(&mut m, &moved.views, &obs).ok().and(m.sigma_px);
            worst = worst.max(b.map_or(f64::INFINITY, |b| rel(a, b)));
            n += 1;
        }
    }
    (worst <= 1e-9, format!("{n} tracks over 3 scenes, max relative change {worst:.1e}"))
}

// ---------------------------------------------------------------- 9

fn origin_view(id: u32) -> View {
    View::new(id, Intrinsics::new(500.0, 500.0, 320.0, 240.0), Matrix3::identity(), Vector3::zeros()).unwrap()
}

fn det(a: (f64, f64), b: (f64, f64)) -> Segment2<f64> {
    Segment2::new(Vector2::new(a.0, a.1), Vector2::new(b.0, b.1)).unwrap()
}

/// Scores a detection against a segment projecting to row 240, columns 220 to 420.
fn score(d: &Segment2<f64>) -> LineScore {
    let seg = Segment3::from_endpoints(Vector3::new(-1.0, 0.0, 5.0), Vector3::new(1.0, 0.0, 5.0)).unwrap();
    line_score(&origin_view(0), &seg, d, &MappingConfig::default()).unwrap()
}

fn at_offset(d: f64) -> bool {
    score(&det((250.0, 240.0 + d), (390.0, 240.0 + d))).within_gates(&MappingConfig::default())
}

fn at_angle(deg: f64) -> bool {
    let (s, c) = deg.to_radians().sin_cos();
    score(&det((320.0 - 10.0 * c, 240.0 - 10.0 * s), (320.0 + 10.0 * c, 240.0 + 10.0 * s))).within_gates(&MappingConfig::default())
}

fn vp_image(view_id: u32, d: Vector3<f64>, n_lines: usize) -> ImageObservations {
    let k = Intrinsics::new(500.0, 500.0, 320.0, 240.0);
    ImageObservations {
        view_id,
        intrinsics: k,
        keypoints: vec![],
        segments: vec![det((0.0, 0.0), (10.0, 0.0)); n_lines],
        vps: vec![VpDetection {
            direction: k.matrix() * d,
            line_ids: (0..n_lines as u32).collect(),
        }],
    }
}

fn vp_continues_at(deg: f64) -> bool {
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
    map.vps.insert(id, VpTrack { direction: Vector3::x(), supports: vec![Support::new(FeatureRef::new(0, 0))] });
    vp_continue(&mut map, &obs, &MappingConfig::default(), 1, 0).is_some()
}

fn vp_matched_with(shared: usize) -> bool {
    let images = vec![vp_image(0, Vector3::x(), 10), vp_image(1, Vector3::x(), 10)];
    let mut lines = Graph::default();
    for i in 0..shared as u32 {
        lines.add(FeatureRef::new(0, i), FeatureRef::new(1, i), 1.0);
    }
    derive_vp_matches(&images, &lines).contains(&FeatureRef::new(0, 0), &FeatureRef::new(1, 0))
}

/// Supports left after relabelling with every label kept.
fn kept(active: usize, inactive: usize) -> usize {
    let mut s: Vec<Support> = (0..(active + inactive) as u32)
        .map(|i| Support { active: (i as usize) < active, ..Support::new(FeatureRef::new(i, 0)) })
        .collect();
    relabel(&mut s, &RefineConfig::default(), &mut LabelCounts::default(), |_| None);
    s.len()
}

fn line_start() -> bool {
    let mut map = Map::default();
    let mut ok = true;
    for id in 0..3 {
        map.register(origin_view(id));
        ok &= line_views(&map, id, LINE_START_VIEWS).is_empty();
    }
    map.register(origin_view(3));
    ok && line_views(&map, 3, LINE_START_VIEWS) == vec![0, 1, 2, 3]
}

fn threshold_fidelity() -> Outcome {
    let cfg = MappingConfig::default();
    let k = Kernel::<f64>::Cauchy(CAUCHY_PARAM);
    let checks = [
        ("tau_p 2px", TAU_P_PX == 2.0 && at_offset(1.99) && !at_offset(2.0) && !at_offset(2.01)),
        ("tau_a 5deg", TAU_A_DEG == 5.0 && at_angle(4.95) && !at_angle(5.05)),
        (
            "retriangulation 100px",
            RETRIANGULATE_MIN_LENGTH_PX == 100.0 && creates_first(100.01, &cfg) && !creates_first(100.0, &cfg),
        ),
        ("stable >10 active", STABLE_MIN_ACTIVE == 10 && kept(10, 3) == 13 && kept(11, 3) == 11),
        ("vp gate 3deg", VP_GATE_DEG == 3.0 && vp_continues_at(2.95) && !vp_continues_at(3.05)),
        ("vp match 5", VP_MIN_LINE_MATCHES == 5 && vp_matched_with(5) && !vp_matched_with(4)),
        (
            "cauchy 0.25",
            CAUCHY_PARAM == 0.25 && Kernel::<f64>::default() == k && (k.d1(0.0625) - 0.5).abs() < 1e-15,
        ),
        ("lines from 4th view", LINE_START_VIEWS == 4 && line_start()),
    ];
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    (failed.is_empty(), if failed.is_empty() { "8 constants pinned at their boundaries".into() } else { format!("failed: {failed:?}") })
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("jacobian validity", jacobian_validity),
        ("covariance correctness", covariance_correctness),
        ("uncertainty-precision correlation", uncertainty_precision),
        ("solver exactness", solver_exactness),
        ("end-to-end robustness", end_to_end),
        ("caching and two-step effect", caching_effect),
        ("determinism", determinism),
        ("scale invariance", scale_invariance),
        ("threshold fidelity", threshold_fidelity),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|s| s.parse().ok());
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if only.is_some_and(|o| o != i + 1) {
            continue;
        }
        let t = Instant::now();
        let (ok, detail) = f();
        println!(
            "criterion {} {name}: {} ({detail}; {:.1}s)",
            i + 1,
            if ok { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64()
        );
        failed += usize::from(!ok);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
