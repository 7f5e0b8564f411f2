#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;

use treetrack_core::eval::{evaluate, Estimate, TimingReport, DEFAULT_MATCH_RADIUS};
use treetrack_core::io::{self, IoError};
use treetrack_core::pipeline::{ConfigError, Pipeline, PipelineConfig, PipelineError};
use treetrack_core::sim::{
    generate_scene, simulate_trajectory, ForestLayout, ScannerSpec, SceneError, SceneSpec, TrajectorySpec,
};
use treetrack_core::Execution;

#[derive(Parser)]
#[command(
    name = "treetrack",
    version,
    about = "Tree detection, tracking and DBH estimation from LiDAR scan logs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a random transect forest scene and a straight walking path.
    GenScene {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        path_out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 30)]
        trees: usize,
        #[arg(long, default_value_t = 150.0)]
        length: f64,
    },
    /// Simulate a scan log and ground truth for a scene walked along a path.
    Simulate {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        path: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed stored in the scene file.
        #[arg(long)]
        seed: Option<u64>,
        /// Scanner model as JSON; defaults apply when omitted.
        #[arg(long)]
        scanner: Option<PathBuf>,
        #[arg(long, default_value_t = 1.2)]
        sensor_height: f64,
        #[arg(long)]
        serial: bool,
    },
    /// Run the pipeline over a scan log and write the tree inventory.
    Run {
        #[arg(long)]
        log: PathBuf,
        /// Flat `key = value` configuration; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Single-threaded execution with the elevation filter run inline.
        #[arg(long)]
        serial: bool,
    },
    /// Compare an inventory with ground truth and write metrics.
    Evaluate {
        #[arg(long)]
        inventory: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Timing report from `run`, copied into the metrics.
        #[arg(long)]
        timing: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_MATCH_RADIUS)]
        match_radius: f64,
    },
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Input(String),
    Scene(String),
    Pipeline(String),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => 3,
            Failure::Input(_) => 4,
            Failure::Scene(_) => 5,
            Failure::Pipeline(_) => 6,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "config error: {m}"),
            Failure::Input(m) => write!(f, "input error: {m}"),
            Failure::Scene(m) => write!(f, "scene error: {m}"),
            Failure::Pipeline(m) => write!(f, "pipeline error: {m}"),
        }
    }
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        Failure::Input(e.to_string())
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<SceneError> for Failure {
    fn from(e: SceneError) -> Self {
        Failure::Scene(e.to_string())
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config(c) => c.into(),
            other => Failure::Pipeline(other.to_string()),
        }
    }
}

fn exec_for(serial: bool) -> Execution {
    if serial {
        Execution::Serial
    } else {
        Execution::Parallel
    }
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::Input(format!("{}: {e}", dir.display())))
}

fn gen_scene(out: &Path, path_out: Option<&Path>, seed: u64, trees: usize, length: f64) -> Result<(), Failure> {
    let layout = ForestLayout {
        trees,
        length,
        ..ForestLayout::default()
    };
    let spec = SceneSpec::random_forest(&layout, seed);
    generate_scene(&spec)?;
    io::write_json(out, &spec)?;
    if let Some(p) = path_out {
        std::fs::write(p, format!("0 0\n{length} 0\n")).map_err(|e| Failure::Input(format!("{}: {e}", p.display())))?;
    }
    info!("wrote scene with {} trees to {}", spec.trees.len(), out.display());
    Ok(())
}

fn simulate(
    scene: &Path,
    path: &Path,
    out: &Path,
    seed: Option<u64>,
    scanner: Option<&Path>,
    sensor_height: f64,
    exec: Execution,
) -> Result<(), Failure> {
    let mut spec: SceneSpec = io::read_json(scene)?;
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    let scanner: ScannerSpec = match scanner {
        Some(p) => io::read_json(p)?,
        None => ScannerSpec::default(),
    };
    scanner.validate().map_err(Failure::Config)?;
    if !(sensor_height > 0.0) {
        return Err(Failure::Config(format!(
            "sensor height must be positive, got {sensor_height}"
        )));
    }
    let polyline = io::read_path(path)?;
    if polyline.is_empty() {
        return Err(Failure::Input(format!("{}: path has no vertices", path.display())));
    }
    let (scene, truth) = generate_scene(&spec)?;
    let trajectory = TrajectorySpec {
        sensor_height,
        ..TrajectorySpec::default()
    };
    let scans = simulate_trajectory(&scene, &polyline, &scanner, &trajectory, exec);
    create_dir(out)?;
    io::write_scan_log(out, scans.iter().map(|s| &s.frame))?;
    io::write_ground_truth(&out.join("ground_truth.csv"), &truth)?;
    info!("simulated {} frames into {}", scans.len(), out.display());
    Ok(())
}

fn run(log: &Path, config: Option<&Path>, out: &Path, exec: Execution) -> Result<(), Failure> {
    let config = match config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?;
            PipelineConfig::from_kv(&text).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?
        }
        None => PipelineConfig::default(),
    };
    let mut pipeline = Pipeline::new(config, exec)?;
    for frame in io::open_scan_log(log)? {
        let frame = frame?;
        pipeline.process_frame(&frame)?;
    }
    pipeline.finish()?;
    create_dir(out)?;
    io::write_inventory(&out.join("inventory.csv"), &pipeline.inventory().descriptors())?;
    let timing = TimingReport::new(pipeline.reports(), pipeline.filter_runs());
    io::write_json(&out.join("timing.json"), &timing)?;
    info!(
        "processed {} frames, {} trees; mean frame time {:.1} ms",
        timing.frames,
        pipeline.inventory().len(),
        timing.stages.get("total").map_or(0.0, |s| s.mean * 1e3)
    );
    Ok(())
}

fn evaluate_cmd(inventory: &Path, truth: &Path, out: &Path, timing: Option<&Path>, radius: f64) -> Result<(), Failure> {
    if !(radius > 0.0) {
        return Err(Failure::Config(format!("match radius must be positive, got {radius}")));
    }
    let records = io::read_inventory(inventory)?;
    let truth = io::read_ground_truth(truth)?;
    let estimates: Vec<Estimate> = records.iter().map(Estimate::from).collect();
    let mut report = evaluate(&estimates, &truth, radius);
    if let Some(p) = timing {
        let t: TimingReport = io::read_json(p)?;
        report.timing = t.stages;
    }
    io::write_json(out, &report)?;
    info!(
        "detected {}/{} trees, rmse {:?} m ({:?} m without outliers)",
        report.detected, report.truth_count, report.rmse, report.rmse_without_outliers
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenScene {
            out,
            path_out,
            seed,
            trees,
            length,
        } => gen_scene(out, path_out.as_deref(), *seed, *trees, *length),
        Command::Simulate {
            scene,
            path,
            out,
            seed,
            scanner,
            sensor_height,
            serial,
        } => simulate(
            scene,
            path,
            out,
            *seed,
            scanner.as_deref(),
            *sensor_height,
            exec_for(*serial),
        ),
        Command::Run {
            log,
            config,
            out,
            serial,
        } => run(log, config.as_deref(), out, exec_for(*serial)),
        Command::Evaluate {
            inventory,
            truth,
            out,
            timing,
            match_radius,
        } => evaluate_cmd(inventory, truth, out, timing.as_deref(), *match_radius),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("treetrack: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
