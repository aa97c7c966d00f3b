//! Gaze images: eyelid and iris polygons filled with fixed grey levels.

use image::{Rgb, RgbImage};
use log::warn;
use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EYELID_COLOR: [u8; 3] = [180, 180, 180];
pub const IRIS_COLOR: [u8; 3] = [90, 90, 90];

/// Outline polygons of one eye, in pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EyePolygons {
    #[serde(with = "points_serde")]
    pub eyelid: Vec<Vector2<f64>>,
    #[serde(
        default,
        skip_serializing_if = "Option::is_none",
        with = "opt_points_serde"
    )]
    pub iris: Option<Vec<Vector2<f64>>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GazeFrame {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub left: Option<EyePolygons>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub right: Option<EyePolygons>,
}

impl GazeFrame {
    pub fn eyes(&self) -> impl Iterator<Item = &EyePolygons> {
        self.left.iter().chain(self.right.iter())
    }

    /// Applies `f` to every polygon vertex.
    pub fn map_points(&self, mut f: impl FnMut(usize, Vector2<f64>) -> Vector2<f64>) -> GazeFrame {
        let mut map_eye = |eye_index: usize, eye: &EyePolygons| EyePolygons {
            eyelid: eye.eyelid.iter().map(|p| f(eye_index, *p)).collect(),
            iris: eye
                .iris
                .as_ref()
                .map(|iris| iris.iter().map(|p| f(eye_index, *p)).collect()),
        };
        GazeFrame {
            left: self.left.as_ref().map(|e| map_eye(0, e)),
            right: self.right.as_ref().map(|e| map_eye(1, e)),
        }
    }
}

mod points_serde {
    use nalgebra::Vector2;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(points: &[Vector2<f64>], s: S) -> Result<S::Ok, S::Error> {
        points
            .iter()
            .map(|p| [p.x, p.y])
            .collect::<Vec<_>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vector2<f64>>, D::Error> {
        let raw: Vec<[f64; 2]> = Vec::deserialize(d)?;
        Ok(raw.into_iter().map(|[x, y]| Vector2::new(x, y)).collect())
    }
}

mod opt_points_serde {
    use nalgebra::Vector2;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(
        points: &Option<Vec<Vector2<f64>>>,
        s: S,
    ) -> Result<S::Ok, S::Error> {
        match points {
            Some(p) => super::points_serde::serialize(p, s),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> Result<Option<Vec<Vector2<f64>>>, D::Error> {
        let raw: Option<Vec<[f64; 2]>> = Option::deserialize(d)?;
        Ok(raw.map(|r| r.into_iter().map(|[x, y]| Vector2::new(x, y)).collect()))
    }
}

#[derive(Serialize, Deserialize)]
struct GazeFile {
    frames: Vec<GazeFrame>,
}

pub fn parse_gaze_json(text: &str) -> Result<Vec<GazeFrame>> {
    let file: GazeFile =
        serde_json::from_str(text).map_err(|e| Error::Format(format!("gaze JSON: {e}")))?;
    for (t, frame) in file.frames.iter().enumerate() {
        for eye in frame.eyes() {
            let finite = eye
                .eyelid
                .iter()
                .chain(eye.iris.iter().flatten())
                .all(|p| p.x.is_finite() && p.y.is_finite());
            if !finite {
                return Err(Error::validation(
                    "gaze",
                    format!("frame {t} has a non-finite point"),
                ));
            }
        }
    }
    Ok(file.frames)
}

pub fn gaze_to_json(frames: &[GazeFrame]) -> String {
    serde_json::to_string(&GazeFile {
        frames: frames.to_vec(),
    })
    .expect("gaze JSON serialization")
}

pub fn load_gaze(path: impl AsRef<std::path::Path>) -> Result<Vec<GazeFrame>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_gaze_json(&text)
}

pub fn save_gaze(frames: &[GazeFrame], path: impl AsRef<std::path::Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, gaze_to_json(frames)).map_err(|e| Error::io(path, e))
}

/// Pixels whose centre lies inside `polygon` under the even-odd rule,
/// filled one scanline at a time. Returns `(x, y)` spans as
/// `(y, x_start, x_end_exclusive)`.
pub fn scanline_spans(polygon: &[Vector2<f64>], width: u32, height: u32) -> Vec<(u32, u32, u32)> {
    let mut spans = Vec::new();
    if polygon.len() < 3 {
        return spans;
    }
    let min_y = polygon.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
    let max_y = polygon
        .iter()
        .map(|p| p.y)
        .fold(f64::NEG_INFINITY, f64::max);
    let y0 = (min_y - 0.5).ceil().max(0.0);
    let y1 = (max_y - 0.5).floor().min(height as f64 - 1.0);
    if y0 > y1 {
        return spans;
    }
    let mut xs = Vec::new();
    for row in y0 as u32..=y1 as u32 {
        let yc = row as f64 + 0.5;
        xs.clear();
        for i in 0..polygon.len() {
            let a = polygon[i];
            let b = polygon[(i + 1) % polygon.len()];
            if (a.y <= yc) != (b.y <= yc) {
                xs.push(a.x + (yc - a.y) * (b.x - a.x) / (b.y - a.y));
            }
        }
        xs.sort_by(f64::total_cmp);
        for pair in xs.chunks_exact(2) {
            // Pixel i is inside when its centre i + 0.5 lies in [x0, x1).
            let start = (pair[0] - 0.5).ceil().max(0.0);
            let end = (pair[1] - 0.5).ceil().min(width as f64);
            if start < end {
                spans.push((row, start as u32, end as u32));
            }
        }
    }
    spans
}

fn put(img: &mut RgbImage, x: i64, y: i64, color: [u8; 3]) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, Rgb(color));
    }
}

/// One-pixel Bresenham segment between the pixels containing `a` and `b`.
fn draw_line(img: &mut RgbImage, a: Vector2<f64>, b: Vector2<f64>, color: [u8; 3]) {
    let (mut x0, mut y0) = (a.x.floor() as i64, a.y.floor() as i64);
    let (x1, y1) = (b.x.floor() as i64, b.y.floor() as i64);
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        put(img, x0, y0, color);
        if x0 == x1 && y0 == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x0 += sx;
        }
        if e2 <= dx {
            err += dx;
            y0 += sy;
        }
    }
}

fn draw_polygon(img: &mut RgbImage, polygon: &[Vector2<f64>], color: [u8; 3], what: &str) {
    if polygon.len() < 3 {
        warn!("skipping {what} polygon with {} points", polygon.len());
        return;
    }
    if !polygon.iter().all(|p| p.x.is_finite() && p.y.is_finite()) {
        warn!("skipping {what} polygon with non-finite points");
        return;
    }
    for (y, x0, x1) in scanline_spans(polygon, img.width(), img.height()) {
        for x in x0..x1 {
            img.put_pixel(x, y, Rgb(color));
        }
    }
    // Coordinates far outside the image would make the line walk needlessly long.
    let limit = 4.0 * (img.width().max(img.height()) as f64 + 1.0);
    for i in 0..polygon.len() {
        let a = polygon[i];
        let b = polygon[(i + 1) % polygon.len()];
        if a.amax() <= limit && b.amax() <= limit {
            draw_line(img, a, b, color);
        }
    }
}

/// Renders both eyes: eyelids first, irises drawn over them.
pub fn render_gaze(gaze: &GazeFrame, width: u32, height: u32) -> Result<RgbImage> {
    if width == 0 || height == 0 {
        return Err(Error::ImageSize { width, height });
    }
    let mut img = RgbImage::new(width, height);
    for eye in gaze.eyes() {
        draw_polygon(&mut img, &eye.eyelid, EYELID_COLOR, "eyelid");
    }
    for eye in gaze.eyes() {
        if let Some(iris) = &eye.iris {
            draw_polygon(&mut img, iris, IRIS_COLOR, "iris");
        }
    }
    Ok(img)
}
