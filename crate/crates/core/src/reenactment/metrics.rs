//! Per-pixel RGB distance between images and frame sequences.

use std::path::{Path, PathBuf};

use image::{GrayImage, Luma, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::pairwise_sum;

/// Largest possible per-pixel distance, `√(3·255²)`.
pub const MAX_PIXEL_ERROR: f64 = 441.672_955_930_063_7;

#[derive(Debug, Clone, PartialEq)]
pub struct PixelError {
    pub mean: f64,
    pub width: u32,
    pub height: u32,
    /// Row-major per-pixel Euclidean RGB distance.
    pub heatmap: Vec<f64>,
}

impl PixelError {
    /// Grey-level rendering of the heatmap, scaled so `MAX_PIXEL_ERROR` maps to 255.
    pub fn heatmap_image(&self) -> GrayImage {
        let mut img = GrayImage::new(self.width, self.height);
        for (p, e) in img.pixels_mut().zip(&self.heatmap) {
            *p = Luma([(255.0 * e / MAX_PIXEL_ERROR).round().clamp(0.0, 255.0) as u8]);
        }
        img
    }
}

pub fn per_pixel_error(a: &RgbImage, b: &RgbImage) -> Result<PixelError> {
    if a.dimensions() != b.dimensions() {
        return Err(Error::Format(format!(
            "image sizes differ: {:?} vs {:?}",
            a.dimensions(),
            b.dimensions()
        )));
    }
    let heatmap: Vec<f64> = a
        .pixels()
        .zip(b.pixels())
        .map(|(p, q)| {
            let sq: i32 = (0..3).map(|c| (p[c] as i32 - q[c] as i32).pow(2)).sum();
            (sq as f64).sqrt()
        })
        .collect();
    let mean = if heatmap.is_empty() {
        0.0
    } else {
        pairwise_sum(&heatmap) / heatmap.len() as f64
    };
    Ok(PixelError {
        mean,
        width: a.width(),
        height: a.height(),
        heatmap,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SequenceReport {
    pub per_frame: Vec<f64>,
    pub overall: f64,
}

/// PNG files of a directory in name order.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("png"))
        {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    image::open(path)
        .map(|img| img.to_rgb8())
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            source: e,
        })
}

/// Frame-wise errors between two frame lists plus their average.
pub fn sequence_error_images(
    a: &[RgbImage],
    b: &[RgbImage],
) -> Result<(SequenceReport, Vec<PixelError>)> {
    Error::check_len("frame count", a.len(), b.len())?;
    if a.is_empty() {
        return Err(Error::EmptySequence("no frames to compare"));
    }
    let errors = a
        .iter()
        .zip(b)
        .map(|(x, y)| per_pixel_error(x, y))
        .collect::<Result<Vec<_>>>()?;
    let per_frame: Vec<f64> = errors.iter().map(|e| e.mean).collect();
    let overall = pairwise_sum(&per_frame) / per_frame.len() as f64;
    Ok((SequenceReport { per_frame, overall }, errors))
}

/// Compares the PNG frames of two directories, matched by sorted name.
pub fn sequence_error(dir_a: &Path, dir_b: &Path) -> Result<(SequenceReport, Vec<PixelError>)> {
    let fa = list_frames(dir_a)?;
    let fb = list_frames(dir_b)?;
    Error::check_len("frame count", fa.len(), fb.len())?;
    let load = |files: &[PathBuf]| {
        files
            .iter()
            .map(|p| read_rgb(p))
            .collect::<Result<Vec<_>>>()
    };
    sequence_error_images(&load(&fa)?, &load(&fb)?)
}
