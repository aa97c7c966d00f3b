//! `h2h`: fit, reenact, render and evaluate conditioning sequences.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::PipelineConfig;
use error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "h2h",
    version,
    about = "Head-to-head face reenactment, geometry stage"
)]
struct Cli {
    /// TOML or JSON pipeline configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory receiving every artifact.
    #[arg(long, global = true, env = "H2H_OUTPUT_DIR")]
    output_dir: Option<PathBuf>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, env = "H2H_THREADS")]
    threads: Option<usize>,
    #[arg(long, global = true)]
    width: Option<u32>,
    #[arg(long, global = true)]
    height: Option<u32>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit identity, expressions and cameras to a landmark sequence.
    Fit(FitArgs),
    /// Combine a source and a target fit into a hybrid trajectory.
    Reenact(ReenactArgs),
    /// Write NMFC (and gaze) frames for a trajectory.
    Render(RenderArgs),
    /// Per-pixel error between two frame directories.
    Eval(EvalArgs),
    /// Generate a synthetic model, two videos and a matching config.
    SynthFixture(SynthArgs),
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Landmarks, `.json` or `.csv`.
    #[arg(long)]
    pub landmarks: Option<PathBuf>,
    /// Base name of the trajectory and report files.
    #[arg(long, default_value = "trajectory")]
    pub name: String,
    #[arg(long = "w-l")]
    pub w_l: Option<f64>,
    #[arg(long = "w-pr")]
    pub w_pr: Option<f64>,
    #[arg(long = "w-sm")]
    pub w_sm: Option<f64>,
    #[arg(long)]
    pub bound_sigmas: Option<f64>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    #[arg(long)]
    pub grad_tolerance: Option<f64>,
    #[arg(long)]
    pub pose_alternations: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ReenactArgs {
    #[arg(long)]
    pub source: PathBuf,
    #[arg(long)]
    pub target: PathBuf,
    /// Source gaze polygons to re-anchor onto the hybrid face (needs a model).
    #[arg(long)]
    pub source_gaze: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value = "hybrid")]
    pub name: String,
    /// Keep source translations instead of moving the head to the target's region.
    #[arg(long)]
    pub no_recenter: bool,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub trajectory: PathBuf,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub gaze: Option<PathBuf>,
    /// Render without a gaze channel even if the config names one.
    #[arg(long, conflicts_with = "gaze")]
    pub no_gaze: bool,
    /// Name of the frame directory inside the output directory.
    #[arg(long, default_value = "conditioning")]
    pub name: String,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    pub dir_a: PathBuf,
    pub dir_b: PathBuf,
    #[arg(long)]
    pub heatmaps: bool,
    #[arg(long, default_value = "metrics")]
    pub name: String,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 500)]
    pub vertices: usize,
    #[arg(long, default_value_t = 20)]
    pub id: usize,
    #[arg(long, default_value_t = 10)]
    pub exp: usize,
    #[arg(long, default_value_t = 50)]
    pub frames: usize,
    #[arg(long, default_value_t = 40)]
    pub target_frames: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Landmark noise standard deviation, pixels.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
}

fn build_config(cli: &Cli) -> Result<PipelineConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(dir) = &cli.output_dir {
        cfg.output_dir = dir.clone();
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    if let Some(w) = cli.width {
        cfg.width = w;
    }
    if let Some(h) = cli.height {
        cfg.height = h;
    }
    match &cli.command {
        Command::Fit(a) => {
            let f = &mut cfg.fit;
            if a.model.is_some() {
                cfg.model = a.model.clone();
            }
            if a.landmarks.is_some() {
                cfg.landmarks = a.landmarks.clone();
            }
            if a.w_l.is_some() {
                f.landmark_weight = a.w_l;
            }
            f.prior_weight = a.w_pr.unwrap_or(f.prior_weight);
            f.smoothness_weight = a.w_sm.unwrap_or(f.smoothness_weight);
            f.bound_sigmas = a.bound_sigmas.unwrap_or(f.bound_sigmas);
            f.max_iterations = a.max_iterations.unwrap_or(f.max_iterations);
            f.grad_tolerance = a.grad_tolerance.unwrap_or(f.grad_tolerance);
            f.pose_alternations = a.pose_alternations.unwrap_or(f.pose_alternations);
        }
        Command::Reenact(a) => {
            if a.model.is_some() {
                cfg.model = a.model.clone();
            }
            if a.no_recenter {
                cfg.recenter_translation = false;
            }
        }
        Command::Render(a) => {
            if a.model.is_some() {
                cfg.model = a.model.clone();
            }
            if a.gaze.is_some() {
                cfg.gaze = a.gaze.clone();
            }
            if a.no_gaze {
                cfg.gaze = None;
            }
        }
        Command::Eval(a) => cfg.emit_heatmaps |= a.heatmaps,
        Command::SynthFixture(_) => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = build_config(cli)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| {
            CliError::Config(format!("cannot start {} worker threads: {e}", cfg.threads))
        })?;
    pool.install(|| match &cli.command {
        Command::Fit(a) => commands::fit(&cfg, a),
        Command::Reenact(a) => commands::reenact(&cfg, a),
        Command::Render(a) => commands::render(&cfg, a),
        Command::Eval(a) => commands::eval(&cfg, a),
        Command::SynthFixture(a) => commands::synth_fixture(&cfg, a),
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
