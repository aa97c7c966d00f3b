//! Z-buffered triangle visibility rasterization.
//!
//! Pixels are sampled at their centres. Coverage uses edge functions with a
//! top-left fill rule; each edge function is evaluated from a canonical
//! endpoint order so two triangles sharing an edge see exactly negated
//! values, which makes abutting triangles partition the pixels on that edge.
//! The buffer keeps the largest depth; equal depths keep the lower triangle
//! index. Triangles are not culled by orientation.

use nalgebra::{Vector2, Vector3};

use crate::camera::{project, CameraParams};
use crate::error::{Error, Result};

/// Triangle id stored for pixels no triangle covers.
pub const BACKGROUND: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq)]
pub struct VisibilityMask {
    pub width: u32,
    pub height: u32,
    /// Number of triangles in the rasterized mesh.
    pub num_triangles: usize,
    /// Row-major, `BACKGROUND` where uncovered.
    pub triangle_id: Vec<u32>,
    /// Winning depth per pixel, `-inf` where uncovered.
    pub depth: Vec<f64>,
}

impl VisibilityMask {
    pub fn empty(width: u32, height: u32, num_triangles: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::ImageSize { width, height });
        }
        let len = width as usize * height as usize;
        Ok(VisibilityMask {
            width,
            height,
            num_triangles,
            triangle_id: vec![BACKGROUND; len],
            depth: vec![f64::NEG_INFINITY; len],
        })
    }

    pub fn id_at(&self, x: u32, y: u32) -> Option<u32> {
        let id = self.triangle_id[(y * self.width + x) as usize];
        (id != BACKGROUND).then_some(id)
    }

    pub fn foreground_count(&self) -> usize {
        self.triangle_id
            .iter()
            .filter(|&&id| id != BACKGROUND)
            .count()
    }
}

#[inline]
fn cross(u: Vector2<f64>, v: Vector2<f64>) -> f64 {
    u.x * v.y - u.y * v.x
}

/// Signed edge function of `p` against the directed edge `a → b`, positive
/// on the interior side of a positively oriented triangle.
#[inline]
pub(crate) fn edge_function(a: Vector2<f64>, b: Vector2<f64>, p: Vector2<f64>) -> f64 {
    if (a.x, a.y) <= (b.x, b.y) {
        cross(b - a, p - a)
    } else {
        -cross(a - b, p - b)
    }
}

/// Whether points exactly on the directed edge `a → b` are covered.
#[inline]
pub(crate) fn is_top_left(a: Vector2<f64>, b: Vector2<f64>) -> bool {
    let d = b - a;
    d.y < 0.0 || (d.y == 0.0 && d.x > 0.0)
}

#[inline]
fn covers(w: f64, top_left: bool) -> bool {
    w > 0.0 || (w == 0.0 && top_left)
}

/// Projects the mesh with `cam` and rasterizes it.
pub fn rasterize(
    vertices: &[Vector3<f64>],
    triangles: &[[u32; 3]],
    cam: &CameraParams,
    width: u32,
    height: u32,
) -> Result<VisibilityMask> {
    let proj = project(vertices, cam);
    rasterize_projected(&proj.points, &proj.depth, triangles, width, height)
}

/// Rasterizes already projected vertices.
pub fn rasterize_projected(
    points: &[Vector2<f64>],
    depth: &[f64],
    triangles: &[[u32; 3]],
    width: u32,
    height: u32,
) -> Result<VisibilityMask> {
    Error::check_len("vertex depths", points.len(), depth.len())?;
    let mut mask = VisibilityMask::empty(width, height, triangles.len())?;
    let n = points.len();
    for (m, tri) in triangles.iter().enumerate() {
        if let Some(&i) = tri.iter().find(|&&i| i as usize >= n) {
            return Err(Error::validation(
                "triangles",
                format!("triangle {m} references vertex {i} of {n}"),
            ));
        }
        let [ia, ib, ic] = tri.map(|i| i as usize);
        let (a, mut b, mut c) = (points[ia], points[ib], points[ic]);
        let (za, mut zb, mut zc) = (depth[ia], depth[ib], depth[ic]);
        if ![a, b, c].iter().all(|p| p.x.is_finite() && p.y.is_finite()) {
            continue;
        }
        let area = cross(b - a, c - a);
        if area == 0.0 || !area.is_finite() {
            continue;
        }
        if area < 0.0 {
            std::mem::swap(&mut b, &mut c);
            std::mem::swap(&mut zb, &mut zc);
        }
        let tl = [is_top_left(b, c), is_top_left(c, a), is_top_left(a, b)];

        let min_x = a.x.min(b.x).min(c.x);
        let max_x = a.x.max(b.x).max(c.x);
        let min_y = a.y.min(b.y).min(c.y);
        let max_y = a.y.max(b.y).max(c.y);
        let x0 = (min_x - 0.5).ceil().max(0.0);
        let x1 = (max_x - 0.5).floor().min(width as f64 - 1.0);
        let y0 = (min_y - 0.5).ceil().max(0.0);
        let y1 = (max_y - 0.5).floor().min(height as f64 - 1.0);
        if x0 > x1 || y0 > y1 {
            continue;
        }
        for py in y0 as u32..=y1 as u32 {
            for px in x0 as u32..=x1 as u32 {
                let p = Vector2::new(px as f64 + 0.5, py as f64 + 0.5);
                let w0 = edge_function(b, c, p);
                let w1 = edge_function(c, a, p);
                let w2 = edge_function(a, b, p);
                if !(covers(w0, tl[0]) && covers(w1, tl[1]) && covers(w2, tl[2])) {
                    continue;
                }
                let z = (w0 * za + w1 * zb + w2 * zc) / (w0 + w1 + w2);
                let idx = (py * width + px) as usize;
                if z > mask.depth[idx] {
                    mask.depth[idx] = z;
                    mask.triangle_id[idx] = m as u32;
                }
            }
        }
    }
    Ok(mask)
}
