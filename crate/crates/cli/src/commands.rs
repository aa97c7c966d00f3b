use std::path::{Path, PathBuf};

use h2h_core::conditioning::gaze::{load_gaze, save_gaze};
use h2h_core::conditioning::{render_conditioning_sequence, RenderOptions};
use h2h_core::fitting::io::{
    load_landmarks, load_trajectory, save_landmarks_json, save_trajectory,
};
use h2h_core::fitting::EnergyBreakdown;
use h2h_core::model::{load_model, save_model};
use h2h_core::reenactment::metrics::sequence_error;
use h2h_core::reenactment::{adapt_gaze, compose_hybrid, HybridOptions, Provenance};
use h2h_core::synthetic::{SyntheticModelSpec, SyntheticVideoSpec};
use h2h_core::{fit_video, Error, FitConfig, MorphableModel};
use log::info;
use serde::Serialize;

use crate::config::PipelineConfig;
use crate::error::CliError;
use crate::{EvalArgs, FitArgs, ReenactArgs, RenderArgs, SynthArgs};

fn required<'a>(value: &'a Option<PathBuf>, what: &str) -> Result<&'a Path, CliError> {
    value
        .as_deref()
        .ok_or_else(|| CliError::Config(format!("no {what} given (flag or config file)")))
}

fn output_dir(cfg: &PipelineConfig) -> Result<&Path, CliError> {
    let dir = cfg.output_dir.as_path();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    Ok(dir)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn model(cfg: &PipelineConfig) -> Result<MorphableModel, CliError> {
    Ok(load_model(required(&cfg.model, "model path")?)?)
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct FitReport {
    frames: usize,
    energy: EnergyBreakdown,
    iterations: usize,
    converged: bool,
    mean_reprojection_error: f64,
    config: FitConfig,
}

pub fn fit(cfg: &PipelineConfig, args: &FitArgs) -> Result<(), CliError> {
    let model = model(cfg)?;
    let landmarks = load_landmarks(required(&cfg.landmarks, "landmark path")?)?;
    let result = fit_video(&model, &landmarks, &cfg.fit)?;
    let dir = output_dir(cfg)?;
    save_trajectory(&result.trajectory, dir.join(format!("{}.h2ht", args.name)))?;
    let report = FitReport {
        frames: landmarks.len(),
        energy: result.energy,
        iterations: result.iterations,
        converged: result.converged,
        mean_reprojection_error: result.mean_reprojection_error,
        config: cfg.fit,
    };
    write_json(&dir.join(format!("{}.report.json", args.name)), &report)?;
    info!(
        "fitted {} frames, mean reprojection error {:.4} px",
        report.frames, report.mean_reprojection_error
    );
    Ok(())
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct ProvenanceRecord {
    #[serde(flatten)]
    files: Provenance,
    recenter_translation: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    source_gaze: Option<String>,
}

pub fn reenact(cfg: &PipelineConfig, args: &ReenactArgs) -> Result<(), CliError> {
    let source = load_trajectory(&args.source)?;
    let target = load_trajectory(&args.target)?;
    let options = HybridOptions {
        recenter_translation: cfg.recenter_translation,
    };
    let mut hybrid = compose_hybrid(&source, &target, &options)?;
    hybrid.provenance = Provenance {
        source: args.source.display().to_string(),
        target: args.target.display().to_string(),
    };
    let dir = output_dir(cfg)?;
    save_trajectory(&hybrid.trajectory, dir.join(format!("{}.h2ht", args.name)))?;
    if let Some(gaze_path) = &args.source_gaze {
        let model = model(cfg)?;
        let gaze = load_gaze(gaze_path)?;
        let adapted = adapt_gaze(&gaze, &source, &hybrid, &model)?;
        save_gaze(&adapted, dir.join(format!("{}.gaze.json", args.name)))?;
    }
    let record = ProvenanceRecord {
        files: hybrid.provenance,
        recenter_translation: cfg.recenter_translation,
        source_gaze: args.source_gaze.as_ref().map(|p| p.display().to_string()),
    };
    write_json(&dir.join(format!("{}.provenance.json", args.name)), &record)
}

pub fn render(cfg: &PipelineConfig, args: &RenderArgs) -> Result<(), CliError> {
    let model = model(cfg)?;
    let traj = load_trajectory(&args.trajectory)?;
    let gaze = match &cfg.gaze {
        Some(p) => load_gaze(p)?,
        None => Vec::new(),
    };
    let frames_dir = output_dir(cfg)?.join(&args.name);
    let options = RenderOptions {
        trajectory_name: Some(args.trajectory.display().to_string()),
    };
    let manifest = render_conditioning_sequence(
        &model,
        &traj,
        &gaze,
        cfg.width,
        cfg.height,
        &frames_dir,
        &options,
    )?;
    info!(
        "wrote {} frames to {}",
        manifest.frames,
        frames_dir.display()
    );
    Ok(())
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct HeatmapEntry {
    file: String,
    mean: f64,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct EvalReport {
    per_frame: Vec<f64>,
    overall: f64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    heatmaps: Vec<HeatmapEntry>,
}

pub fn eval(cfg: &PipelineConfig, args: &EvalArgs) -> Result<(), CliError> {
    let (report, errors) = sequence_error(&args.dir_a, &args.dir_b)?;
    let dir = output_dir(cfg)?;
    let mut heatmaps = Vec::new();
    if cfg.emit_heatmaps {
        let heat_dir = dir.join(format!("{}_heatmaps", args.name));
        std::fs::create_dir_all(&heat_dir).map_err(|e| Error::io(&heat_dir, e))?;
        for (t, e) in errors.iter().enumerate() {
            let file = format!("heatmap_{t:06}.png");
            let path = heat_dir.join(&file);
            e.heatmap_image()
                .save_with_format(&path, image::ImageFormat::Png)
                .map_err(|source| Error::Image { path, source })?;
            heatmaps.push(HeatmapEntry { file, mean: e.mean });
        }
    }
    let out = EvalReport {
        per_frame: report.per_frame,
        overall: report.overall,
        heatmaps,
    };
    println!("{:.6}", out.overall);
    write_json(&dir.join(format!("{}.json", args.name)), &out)
}

pub fn synth_fixture(cfg: &PipelineConfig, args: &SynthArgs) -> Result<(), CliError> {
    let dir = output_dir(cfg)?;
    let model = SyntheticModelSpec::new(args.vertices, args.id, args.exp)
        .seed(args.seed)
        .build()?;
    save_model(&model, dir.join("model.h2hm"))?;
    for (name, frames, seed) in [
        (
            "source",
            args.frames,
            args.seed.wrapping_mul(2).wrapping_add(1),
        ),
        (
            "target",
            args.target_frames,
            args.seed.wrapping_mul(2).wrapping_add(2),
        ),
    ] {
        let video = SyntheticVideoSpec::new(frames)
            .seed(seed)
            .noise(args.noise)
            .size(cfg.width, cfg.height)
            .generate(&model)?;
        save_landmarks_json(&video.landmarks, dir.join(format!("{name}_landmarks.json")))?;
        save_gaze(&video.gaze, dir.join(format!("{name}_gaze.json")))?;
        save_trajectory(&video.truth, dir.join(format!("{name}_truth.h2ht")))?;
    }
    let fixture_cfg = PipelineConfig {
        model: Some("model.h2hm".into()),
        landmarks: Some("source_landmarks.json".into()),
        gaze: Some("source_gaze.json".into()),
        width: cfg.width,
        height: cfg.height,
        output_dir: "out".into(),
        threads: 0,
        recenter_translation: true,
        emit_heatmaps: false,
        fit: FitConfig {
            prior_weight: 1e-8,
            smoothness_weight: 0.0,
            pose_alternations: 200,
            ..FitConfig::default()
        },
    };
    let path = dir.join("config.toml");
    std::fs::write(&path, fixture_cfg.to_toml()).map_err(|e| Error::io(&path, e))?;
    Ok(())
}
