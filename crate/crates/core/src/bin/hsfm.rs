use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use hsfm::io::{self, GroundTruthFile, MapFile, ObservationFile, RunConfig, FORMAT_VERSION};
use hsfm::pipeline::{self, RegistrationSummary, StepKind, TraceStep};
use hsfm::registration::{collect_correspondences, register};
use hsfm::synth::{align_views, evaluate_map, evaluate_poses, generate, MapMetrics, PoseMetrics};
use hsfm::{Error, Result};

#[derive(Parser)]
#[command(name = "hsfm", version, about = "Hybrid point/line/vanishing-point structure from motion")]
struct Cli {
    /// JSON run configuration; missing sections take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the scene seed and every pipeline seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = ".")]
    output: PathBuf,
    #[arg(long, global = true, default_value = "warn")]
    log_level: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene: observations.json and ground_truth.json.
    Synth,
    /// Build a map with fixed known poses.
    Triangulate {
        #[arg(long)]
        observations: PathBuf,
        /// Poses from a ground-truth file.
        #[arg(long, conflicts_with = "poses", required_unless_present = "poses")]
        truth: Option<PathBuf>,
        /// Poses from a map file, in its registration order.
        #[arg(long)]
        poses: Option<PathBuf>,
    },
    /// Pose one image against an existing map.
    Register {
        #[arg(long)]
        observations: PathBuf,
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        view: u32,
    },
    /// Full incremental reconstruction.
    Reconstruct {
        #[arg(long)]
        observations: PathBuf,
    },
    /// Compute and embed track covariances.
    Covariance {
        #[arg(long)]
        observations: PathBuf,
        #[arg(long)]
        map: PathBuf,
    },
    /// Pose and map metrics against ground truth.
    Eval {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        truth: PathBuf,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Triangulate { .. } => "triangulate",
            Command::Register { .. } => "register",
            Command::Reconstruct { .. } => "reconstruct",
            Command::Covariance { .. } => "covariance",
            Command::Eval { .. } => "eval",
        }
    }
}

/// Written by every command next to its outputs. Map deltas are not
/// repeated here; they live in the trace of `map.json`.
#[derive(Serialize, Deserialize)]
struct RunTrace {
    format_version: u32,
    command: String,
    seed: Option<u64>,
    steps: Vec<StepSummary>,
}

#[derive(Serialize, Deserialize)]
struct StepSummary {
    kind: StepKind,
    view_id: Option<u32>,
    registration: Option<RegistrationSummary>,
}

impl From<&TraceStep> for StepSummary {
    fn from(s: &TraceStep) -> Self {
        Self {
            kind: s.kind,
            view_id: s.view_id,
            registration: s.registration.clone(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct RegistrationFile {
    format_version: u32,
    view_id: u32,
    success: bool,
    rotation: nalgebra::Matrix3<f64>,
    translation: nalgebra::Vector3<f64>,
    summary: RegistrationSummary,
}

/// Output files, written only once the whole command has succeeded.
struct Outputs(Vec<(&'static str, String)>);

impl Outputs {
    fn add<T: Serialize>(&mut self, name: &'static str, value: &T) -> Result<()> {
        self.0.push((name, io::to_json(value)?));
        Ok(())
    }

    fn write(self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, text) in self.0 {
            io::write_text(&dir.join(name), &text)?;
        }
        Ok(())
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg: RunConfig = match &cli.config {
        Some(p) => io::read_json(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.scene.seed = seed;
        cfg.pipeline = cfg.pipeline.with_seed(seed);
    }
    cfg.pipeline.ransac.validate().map_err(|e| Error::Parse(format!("config: {e}")))?;
    Ok(cfg)
}

fn eval_text(p: &PoseMetrics, m: &MapMetrics) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "views {} registered {}", p.n_views, p.n_registered);
    let _ = writeln!(s, "valid_fraction {}", p.valid_fraction);
    let _ = writeln!(s, "median_rotation_deg {}", p.median_rotation_deg);
    let _ = writeln!(s, "rmse_translation {}", p.rmse_translation);
    for (t, a) in &p.auc {
        let _ = writeln!(s, "auc@{t}deg {a}");
    }
    let _ = writeln!(s, "line_tracks {} point_tracks {}", m.n_lines, m.n_points);
    for r in &m.rows {
        let _ = writeln!(
            s,
            "eps {} line_precision {} line_recall {} line_recall_length {} point_precision {}",
            r.epsilon, r.line_precision, r.line_recall, r.line_recall_length, r.point_precision
        );
    }
    s
}

fn poses_csv(p: &PoseMetrics) -> String {
    let mut s = String::from("view_id,registered,rotation_deg,translation,valid\n");
    for id in 0..p.n_views as u32 {
        match p.per_view.iter().find(|e| e.view_id == id) {
            Some(e) => {
                let _ = writeln!(s, "{},1,{},{},{}", id, e.rotation_deg, e.translation, e.valid as u8);
            }
            None => {
                let _ = writeln!(s, "{id},0,,,0");
            }
        }
    }
    s
}

fn map_csv(m: &MapMetrics) -> String {
    let mut s = String::from("epsilon,line_precision,line_recall,line_recall_length,point_precision\n");
    for r in &m.rows {
        let _ = writeln!(s, "{},{},{},{},{}", r.epsilon, r.line_precision, r.line_recall, r.line_recall_length, r.point_precision);
    }
    s
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let mut out = Outputs(vec![]);
    let mut steps = vec![];
    match &cli.command {
        Command::Synth => {
            let (gt, obs) = generate(&cfg.scene).map_err(|e| Error::Parse(e.to_string()))?;
            out.add("observations.json", &ObservationFile::new(obs))?;
            out.add("ground_truth.json", &GroundTruthFile::new(cfg.scene.clone(), gt))?;
        }
        Command::Triangulate { observations, truth, poses } => {
            let obs = io::read_observations(observations)?;
            let views = match (truth, poses) {
                (Some(t), _) => io::read_ground_truth(t)?.truth.views,
                (None, Some(p)) => {
                    let m = io::read_map(p, None)?.map;
                    m.order.iter().map(|v| m.views[v].clone()).collect()
                }
                (None, None) => return Err(Error::Parse("triangulate needs --truth or --poses".into())),
            };
            let rec = pipeline::triangulate(&obs, &views, &cfg.pipeline)?;
            steps = rec.trace.iter().map(StepSummary::from).collect();
            out.add("map.json", &MapFile::new(rec.map, rec.trace))?;
        }
        Command::Register { observations, map, view } => {
            let obs = io::read_observations(observations)?;
            let mf = io::read_map(map, Some(&obs))?;
            let corrs = collect_correspondences(&mf.map, &obs, *view, &cfg.pipeline.correspondences)?;
            let r = register(&corrs, &cfg.pipeline.ransac)?;
            out.add(
                "registration.json",
                &RegistrationFile {
                    format_version: FORMAT_VERSION,
                    view_id: *view,
                    success: r.success,
                    rotation: r.pose.rotation,
                    translation: r.pose.translation,
                    summary: RegistrationSummary {
                        inliers: r.inlier_counts(),
                        correspondences: [corrs.points.len(), corrs.lines.len(), corrs.vps.len()],
                        iterations: r.iterations,
                        solvers: r.solvers.clone(),
                    },
                },
            )?;
        }
        Command::Reconstruct { observations } => {
            let obs = io::read_observations(observations)?;
            let rec = pipeline::reconstruct(&obs, &cfg.pipeline)?;
            if !rec.failed.is_empty() {
                log::warn!("{} views not registered: {:?}", rec.failed.len(), rec.failed);
            }
            steps = rec.trace.iter().map(StepSummary::from).collect();
            out.add("map.json", &MapFile::new(rec.map, rec.trace))?;
        }
        Command::Covariance { observations, map } => {
            let obs = io::read_observations(observations)?;
            let mut mf = io::read_map(map, Some(&obs))?;
            let step = pipeline::compute_uncertainties(&mut mf.map, &obs, &cfg.pipeline.refine);
            steps.push(StepSummary::from(&step));
            mf.trace.push(step);
            out.add("map.json", &mf)?;
        }
        Command::Eval { map, truth } => {
            let mf = io::read_map(map, None)?;
            let gt = io::read_ground_truth(truth)?.truth;
            let th = &cfg.eval.thresholds;
            let pm = evaluate_poses(&mf.map.views, &gt, th)?;
            let sim = align_views(&mf.map.views, &gt, th.translation_fraction * gt.diameter, 0)?;
            let mm = evaluate_map(&sim.apply_map(&mf.map)?, &gt, &cfg.eval.epsilons, cfg.eval.min_supports);
            out.0.push(("metrics.txt", eval_text(&pm, &mm)));
            out.0.push(("poses.csv", poses_csv(&pm)));
            out.0.push(("map.csv", map_csv(&mm)));
        }
    }
    out.add(
        "trace.json",
        &RunTrace {
            format_version: FORMAT_VERSION,
            command: cli.command.name().into(),
            seed: cli.seed,
            steps,
        },
    )?;
    out.write(&cli.output)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Parse(_) | Error::InvalidSpec(_) => 2,
        Error::NoValidPair => 3,
        Error::AlignmentFailed => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log_level).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
