use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hsfm::io::{self, MapFile, ObservationFile};
use hsfm::model::{FeatureRef, Map};
use hsfm::synth::{generate, SceneSpec};

fn hsfm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hsfm"))
        .arg("--output")
        .arg(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) {
    let out = hsfm(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const CONFIG: &str = r#"{ "scene": { "n_views": 8, "noise_px": 0.5, "n_points": 200, "n_lines": 80 } }"#;

/// Every command, run into `dir`, each into its own subdirectory.
fn run_all(root: &Path, config: &Path) -> Vec<PathBuf> {
    let c = s(config);
    let dirs: Vec<PathBuf> = ["synth", "tri", "rec", "cov", "reg", "eval"].iter().map(|d| root.join(d)).collect();
    ok(&dirs[0], &["--config", c, "--seed", "3", "synth"]);
    let obs = dirs[0].join("observations.json");
    let gt = dirs[0].join("ground_truth.json");
    ok(&dirs[1], &["--config", c, "--seed", "3", "triangulate", "--observations", s(&obs), "--truth", s(&gt)]);
    ok(&dirs[2], &["--config", c, "--seed", "3", "reconstruct", "--observations", s(&obs)]);
    let map = dirs[2].join("map.json");
    ok(&dirs[3], &["--config", c, "--seed", "3", "covariance", "--observations", s(&obs), "--map", s(&map)]);
    ok(&dirs[4], &["--config", c, "--seed", "3", "register", "--observations", s(&obs), "--map", s(&dirs[1].join("map.json")), "--view", "5"]);
    ok(&dirs[5], &["--config", c, "eval", "--map", s(&dirs[3].join("map.json")), "--truth", s(&gt)]);
    dirs
}

#[test]
fn every_command_is_byte_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("config.json");
    std::fs::write(&config, CONFIG).unwrap();
    let a = run_all(&tmp.path().join("a"), &config);
    let b = run_all(&tmp.path().join("b"), &config);
    for (x, y) in a.iter().zip(&b) {
        let (fx, fy) = (files(x), files(y));
        assert!(fx.contains_key("trace.json"), "{x:?}");
        assert_eq!(fx.keys().collect::<Vec<_>>(), fy.keys().collect::<Vec<_>>());
        for (name, bytes) in &fx {
            assert!(*bytes == fy[name], "{name} differs between runs in {x:?}");
        }
    }
    let eval = files(&a[5]);
    assert!(eval.contains_key("metrics.txt") && eval.contains_key("poses.csv") && eval.contains_key("map.csv"));
    // The written map reads back and validates against its observations.
    let obs = io::read_observations(&a[0].join("observations.json")).unwrap();
    io::read_map(&a[3].join("map.json"), Some(&obs)).unwrap();
}

#[test]
fn malformed_input_exits_2_without_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, "{ \"format_version\": 1, \"images\": [").unwrap();
    let out_dir = tmp.path().join("out");
    let out = hsfm(&out_dir, &["reconstruct", "--observations", s(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out_dir.exists() || files(&out_dir).is_empty());
    let missing = tmp.path().join("missing.json");
    assert_eq!(hsfm(&out_dir, &["reconstruct", "--observations", s(&missing)]).status.code(), Some(2));
    let cfg = tmp.path().join("cfg.json");
    std::fs::write(&cfg, r#"{ "pipeline": { "ransac": { "confidence": 1.5 } } }"#).unwrap();
    assert_eq!(hsfm(&out_dir, &["--config", s(&cfg), "synth"]).status.code(), Some(2));
    assert!(!out_dir.exists() || files(&out_dir).is_empty());
}

#[test]
fn no_valid_pair_exits_3() {
    let (_, mut obs) = generate(&SceneSpec {
        n_views: 2,
        ..SceneSpec::default()
    })
    .unwrap();
    let mut copy = obs.images[0].clone();
    copy.view_id = 1;
    obs.images[1] = copy;
    obs.matches = Default::default();
    for f in 0..obs.images[0].keypoints.len() as u32 {
        obs.matches.points.add(FeatureRef::new(0, f), FeatureRef::new(1, f), 1.0);
    }
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("obs.json");
    io::write_json(&p, &ObservationFile::new(obs)).unwrap();
    let out_dir = tmp.path().join("out");
    let out = hsfm(&out_dir, &["reconstruct", "--observations", s(&p)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(!out_dir.exists() || files(&out_dir).is_empty());
}

#[test]
fn single_view_map_fails_alignment_with_exit_4() {
    let tmp = tempfile::tempdir().unwrap();
    let synth = tmp.path().join("synth");
    ok(&synth, &["synth"]);
    let gt = io::read_ground_truth(&synth.join("ground_truth.json")).unwrap();
    let mut map = Map::default();
    map.register(gt.truth.views[0].clone());
    let p = tmp.path().join("map.json");
    io::write_json(&p, &MapFile::new(map, vec![])).unwrap();
    let out_dir = tmp.path().join("out");
    let out = hsfm(&out_dir, &["eval", "--map", s(&p), "--truth", s(&synth.join("ground_truth.json"))]);
    assert_eq!(out.status.code(), Some(4));
    assert!(!out_dir.exists() || files(&out_dir).is_empty());
}
