//! Conditioning images for a neural renderer: visibility masks, normalized
//! mean-face coordinate (NMFC) images and gaze images, plus the on-disk frame
//! sequence that pairs them.

pub mod gaze;
pub mod raster;

use std::path::{Path, PathBuf};

use image::{ImageFormat, Rgb, RgbImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fitting::ShapeTrajectory;
use crate::model::MorphableModel;
pub use gaze::{render_gaze, EyePolygons, GazeFrame};
pub use raster::{rasterize, rasterize_projected, VisibilityMask, BACKGROUND};

/// Maps a colour channel in `[0, 1]` to a byte.
#[inline]
pub fn quantize(c: f64) -> u8 {
    (255.0 * c).round().clamp(0.0, 255.0) as u8
}

pub fn quantize_color(c: &[f64; 3]) -> [u8; 3] {
    c.map(quantize)
}

/// Colours each covered pixel with its triangle's mean-face centroid colour.
pub fn encode_nmfc(mask: &VisibilityMask, triangle_colors: &[[f64; 3]]) -> Result<RgbImage> {
    Error::check_len(
        "triangle colours",
        mask.num_triangles,
        triangle_colors.len(),
    )?;
    let palette: Vec<[u8; 3]> = triangle_colors.iter().map(quantize_color).collect();
    let mut img = RgbImage::new(mask.width, mask.height);
    for (pixel, &id) in img.pixels_mut().zip(&mask.triangle_id) {
        if id != BACKGROUND {
            *pixel = Rgb(palette[id as usize]);
        }
    }
    Ok(img)
}

/// Synthesizes frame `t` of a trajectory and renders its NMFC image.
pub fn render_nmfc_frame(
    model: &MorphableModel,
    traj: &ShapeTrajectory,
    triangle_colors: &[[f64; 3]],
    t: usize,
    width: u32,
    height: u32,
) -> Result<RgbImage> {
    let verts = model.synthesize(&traj.frame_params(t))?;
    let mask = rasterize(&verts, &model.triangles, &traj.cameras[t], width, height)?;
    encode_nmfc(&mask, triangle_colors)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FramePair {
    pub nmfc: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gaze: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub width: u32,
    pub height: u32,
    pub frames: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<String>,
    pub pairs: Vec<FramePair>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn nmfc_file_name(t: usize) -> String {
    format!("nmfc_{t:06}.png")
}

pub fn gaze_file_name(t: usize) -> String {
    format!("gaze_{t:06}.png")
}

pub(crate) fn write_png(img: &RgbImage, path: &Path) -> Result<()> {
    img.save_with_format(path, ImageFormat::Png)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            source: e,
        })
}

#[derive(Debug, Clone, Default)]
pub struct RenderOptions {
    /// Recorded in the manifest.
    pub trajectory_name: Option<String>,
}

/// Renders and writes every frame of a trajectory; `gaze` is either empty
/// (no gaze channel) or has one entry per frame.
pub fn render_conditioning_sequence(
    model: &MorphableModel,
    traj: &ShapeTrajectory,
    gaze: &[GazeFrame],
    width: u32,
    height: u32,
    out_dir: &Path,
    options: &RenderOptions,
) -> Result<Manifest> {
    if width == 0 || height == 0 {
        return Err(Error::ImageSize { width, height });
    }
    traj.validate()?;
    traj.check_model(model)?;
    let frames = traj.num_frames();
    if !gaze.is_empty() {
        Error::check_len("gaze frames", frames, gaze.len())?;
    }
    let colors = model.normalized_mean_face()?.triangle_colors;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let pairs = (0..frames)
        .into_par_iter()
        .map(|t| -> Result<FramePair> {
            let nmfc = render_nmfc_frame(model, traj, &colors, t, width, height)?;
            let nmfc_name = nmfc_file_name(t);
            write_png(&nmfc, &out_dir.join(&nmfc_name))?;
            let gaze_name = match gaze.get(t) {
                Some(g) => {
                    let img = render_gaze(g, width, height)?;
                    let name = gaze_file_name(t);
                    write_png(&img, &out_dir.join(&name))?;
                    Some(name)
                }
                None => None,
            };
            Ok(FramePair {
                nmfc: nmfc_name,
                gaze: gaze_name,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let manifest = Manifest {
        width,
        height,
        frames,
        trajectory: options.trajectory_name.clone(),
        pairs,
    };
    let path: PathBuf = out_dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serialization");
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn load_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}
