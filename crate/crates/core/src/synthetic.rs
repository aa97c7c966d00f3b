//! Procedural face models and videos with known ground truth, for tests,
//! benchmarks and the `synth-fixture` command.

use nalgebra::{DMatrix, DVector, UnitQuaternion, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::camera::{project, CameraParams};
use crate::conditioning::{EyePolygons, GazeFrame};
use crate::error::{Error, Result};
use crate::fitting::{LandmarkFrame, LandmarkSequence, ShapeTrajectory};
use crate::model::{MorphableModel, ShapeParams, NUM_LANDMARKS};

/// Four-vertex, two-triangle model with one identity and one expression
/// component. Landmarks cycle over the four vertices.
pub fn minimal_model() -> MorphableModel {
    let c = 1.0 / 12f64.sqrt();
    MorphableModel {
        mean_shape: DVector::from_vec(vec![
            -1.0, -1.0, 0.0, 1.0, -1.0, 0.5, -1.0, 1.0, 0.5, 1.0, 1.0, 1.0,
        ]),
        id_basis: DMatrix::from_element(12, 1, c),
        exp_basis: DMatrix::from_fn(12, 1, |r, _| if r % 2 == 0 { c } else { -c }),
        id_sigma: DVector::from_element(1, 1.0),
        exp_sigma: DVector::from_element(1, 1.0),
        triangles: vec![[0, 1, 2], [1, 3, 2]],
        landmark_indices: (0..NUM_LANDMARKS as u32).map(|i| i % 4).collect(),
        left_eye_region: vec![0, 1, 2],
        right_eye_region: vec![1, 2, 3],
    }
}

/// Grid-meshed face-like surface with orthonormal random bases.
#[derive(Debug, Clone)]
pub struct SyntheticModelSpec {
    pub num_vertices: usize,
    pub num_id: usize,
    pub num_exp: usize,
    pub seed: u64,
}

/// Eye centres in normalized face coordinates.
const EYE_CENTERS: [(f64, f64); 2] = [(-0.4, 0.3), (0.4, 0.3)];
const EYE_RING_SIZE: usize = 8;

fn ellipse(center: (f64, f64), radii: (f64, f64), count: usize, phase: f64) -> Vec<(f64, f64)> {
    (0..count)
        .map(|i| {
            let a = phase + std::f64::consts::TAU * i as f64 / count as f64;
            (center.0 + radii.0 * a.cos(), center.1 + radii.1 * a.sin())
        })
        .collect()
}

fn line(from: (f64, f64), to: (f64, f64), count: usize) -> Vec<(f64, f64)> {
    (0..count)
        .map(|i| {
            let s = i as f64 / (count - 1) as f64;
            (from.0 + s * (to.0 - from.0), from.1 + s * (to.1 - from.1))
        })
        .collect()
}

/// 68 points in the usual jaw / brows / nose / eyes / mouth order.
fn landmark_layout() -> Vec<(f64, f64)> {
    let mut pts: Vec<(f64, f64)> = (0..17)
        .map(|i| {
            let a = std::f64::consts::PI * i as f64 / 16.0;
            (-0.85 * a.cos(), 0.1 - 0.85 * a.sin())
        })
        .collect();
    pts.extend(line((-0.7, 0.55), (-0.15, 0.6), 5));
    pts.extend(line((0.15, 0.6), (0.7, 0.55), 5));
    pts.extend(line((0.0, 0.35), (0.0, -0.05), 4));
    pts.extend(line((-0.2, -0.15), (0.2, -0.15), 5));
    for c in EYE_CENTERS {
        pts.extend(ellipse(c, (0.15, 0.06), 6, std::f64::consts::PI));
    }
    pts.extend(ellipse(
        (0.0, -0.45),
        (0.35, 0.12),
        12,
        std::f64::consts::PI,
    ));
    pts.extend(ellipse((0.0, -0.45), (0.22, 0.05), 8, std::f64::consts::PI));
    pts
}

fn nearest_unused(uv: &[(f64, f64)], targets: &[(f64, f64)]) -> Vec<u32> {
    let mut used = vec![false; uv.len()];
    targets
        .iter()
        .map(|t| {
            let best = (0..uv.len())
                .filter(|&i| !used[i])
                .min_by(|&a, &b| {
                    let da = (uv[a].0 - t.0).powi(2) + (uv[a].1 - t.1).powi(2);
                    let db = (uv[b].0 - t.0).powi(2) + (uv[b].1 - t.1).powi(2);
                    da.total_cmp(&db)
                })
                .expect("more targets than vertices");
            used[best] = true;
            best as u32
        })
        .collect()
}

fn surface(u: f64, v: f64) -> Vector3<f64> {
    let dome = 60.0 * (1.0 - 0.45 * u * u - 0.35 * v * v).max(0.0).sqrt();
    let nose = 25.0 * (-(u * u + (v - 0.05).powi(2)) / 0.03).exp();
    let sockets: f64 = EYE_CENTERS
        .iter()
        .map(|(cu, cv)| 8.0 * (-((u - cu).powi(2) + (v - cv).powi(2)) / 0.02).exp())
        .sum();
    Vector3::new(70.0 * u, 90.0 * v, dome + nose - sockets)
}

/// Subtracts from `col` its projection on each of `basis` (unit vectors),
/// twice, then normalizes. Returns `None` when nothing is left.
fn orthonormalize(mut col: DVector<f64>, basis: &[DVector<f64>]) -> Option<DVector<f64>> {
    let start = col.norm();
    for _ in 0..2 {
        for b in basis {
            let d = b.dot(&col);
            col.axpy(-d, b, 1.0);
        }
    }
    let n = col.norm();
    (n > 1e-8 * start).then(|| col / n)
}

/// Displacement fields of the mean under infinitesimal translation, rotation
/// and uniform scaling.
fn rigid_tangents(mean: &DVector<f64>) -> Vec<DVector<f64>> {
    let n = mean.len() / 3;
    let mut fields = Vec::new();
    for axis in 0..3 {
        fields.push(DVector::from_fn(3 * n, |r, _| {
            if r % 3 == axis {
                1.0
            } else {
                0.0
            }
        }));
    }
    for axis in 0..3 {
        let w = Vector3::ith(axis, 1.0);
        let mut f = DVector::zeros(3 * n);
        for i in 0..n {
            let p = Vector3::new(mean[3 * i], mean[3 * i + 1], mean[3 * i + 2]);
            f.fixed_rows_mut::<3>(3 * i).copy_from(&w.cross(&p));
        }
        fields.push(f);
    }
    fields.push(mean.clone());
    let mut ortho = Vec::new();
    for f in fields {
        if let Some(q) = orthonormalize(f, &ortho) {
            ortho.push(q);
        }
    }
    ortho
}

/// Random smooth displacement built from Gaussian bumps centred near `centers`.
fn bump_field(
    uv: &[(f64, f64)],
    centers: &[(f64, f64)],
    width: (f64, f64),
    rng: &mut ChaCha8Rng,
) -> DVector<f64> {
    let mut f = DVector::zeros(3 * uv.len());
    for _ in 0..4 {
        let c = centers[rng.random_range(0..centers.len())];
        let c = (
            c.0 + rng.random_range(-0.15..0.15),
            c.1 + rng.random_range(-0.15..0.15),
        );
        let w = rng.random_range(width.0..width.1);
        let amp = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        for (i, (u, v)) in uv.iter().enumerate() {
            let g = (-((u - c.0).powi(2) + (v - c.1).powi(2)) / (w * w)).exp();
            for a in 0..3 {
                f[3 * i + a] += amp[a] * g;
            }
        }
    }
    f
}

impl SyntheticModelSpec {
    pub fn new(num_vertices: usize, num_id: usize, num_exp: usize) -> Self {
        SyntheticModelSpec {
            num_vertices,
            num_id,
            num_exp,
            seed: 0,
        }
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn build(&self) -> Result<MorphableModel> {
        let n = self.num_vertices;
        let cols = (2..=n)
            .filter(|c| n % c == 0 && c * c <= n)
            .max()
            .unwrap_or(1);
        let rows = n / cols;
        if cols < 4 || n < 100 {
            return Err(Error::validation(
                "num_vertices",
                format!("{n} does not factor into a grid of at least 4 columns and 100 vertices"),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);

        let mut uv = Vec::with_capacity(n);
        for r in 0..rows {
            for c in 0..cols {
                uv.push((
                    -1.0 + 2.0 * c as f64 / (cols - 1) as f64,
                    -1.0 + 2.0 * r as f64 / (rows - 1) as f64,
                ));
            }
        }
        let mut mean = DVector::zeros(3 * n);
        for (i, &(u, v)) in uv.iter().enumerate() {
            mean.fixed_rows_mut::<3>(3 * i).copy_from(&surface(u, v));
        }
        let mut triangles = Vec::with_capacity(2 * (rows - 1) * (cols - 1));
        for r in 0..rows - 1 {
            for c in 0..cols - 1 {
                let i = (r * cols + c) as u32;
                let right = i + 1;
                let down = i + cols as u32;
                triangles.push([i, right, down]);
                triangles.push([right, down + 1, down]);
            }
        }

        let landmark_indices = nearest_unused(&uv, &landmark_layout());
        let rings: Vec<Vec<u32>> = EYE_CENTERS
            .iter()
            .map(|&c| nearest_unused(&uv, &ellipse(c, (0.25, 0.15), EYE_RING_SIZE, 0.0)))
            .collect();

        let mut span = rigid_tangents(&mean);
        let whole_face = [(0.0, 0.0), (-0.5, 0.4), (0.5, 0.4), (0.0, -0.5), (0.0, 0.6)];
        let expressive = [
            (0.0, -0.45),
            (-0.4, 0.35),
            (0.4, 0.35),
            (-0.4, 0.55),
            (0.4, 0.55),
        ];
        let mut draw = |count: usize,
                        centers: &[(f64, f64)],
                        width: (f64, f64),
                        span: &mut Vec<DVector<f64>>| {
            let mut cols = Vec::with_capacity(count);
            let mut attempts = 0;
            while cols.len() < count {
                attempts += 1;
                if attempts > 50 * count + 50 {
                    return Err(Error::DegenerateModel(format!(
                        "cannot draw {count} independent basis vectors on {n} vertices"
                    )));
                }
                if let Some(q) = orthonormalize(bump_field(&uv, centers, width, &mut rng), span) {
                    span.push(q.clone());
                    cols.push(q);
                }
            }
            Ok(cols)
        };
        let id_cols = draw(self.num_id, &whole_face, (0.35, 0.8), &mut span)?;
        let exp_cols = draw(self.num_exp, &expressive, (0.15, 0.35), &mut span)?;

        let model = MorphableModel {
            mean_shape: mean,
            id_basis: DMatrix::from_columns(&id_cols),
            exp_basis: DMatrix::from_columns(&exp_cols),
            id_sigma: DVector::from_fn(self.num_id, |k, _| 150.0 / ((k + 1) as f64).sqrt()),
            exp_sigma: DVector::from_fn(self.num_exp, |k, _| 80.0 / ((k + 1) as f64).sqrt()),
            triangles,
            landmark_indices,
            left_eye_region: rings[0].clone(),
            right_eye_region: rings[1].clone(),
        };
        model.validate()?;
        Ok(model)
    }
}

/// Smooth head motion and expressions rendered to landmarks and gaze polygons.
#[derive(Debug, Clone)]
pub struct SyntheticVideoSpec {
    pub frames: usize,
    pub seed: u64,
    /// Standard deviation of Gaussian landmark noise, pixels.
    pub noise: f64,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone)]
pub struct SyntheticVideo {
    pub truth: ShapeTrajectory,
    pub landmarks: LandmarkSequence,
    pub gaze: Vec<GazeFrame>,
    pub width: u32,
    pub height: u32,
}

fn oscillation(rng: &mut ChaCha8Rng, periods: std::ops::Range<f64>) -> impl Fn(usize) -> f64 {
    let period = rng.random_range(periods);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    move |t| (std::f64::consts::TAU * t as f64 / period + phase).sin()
}

impl SyntheticVideoSpec {
    pub fn new(frames: usize) -> Self {
        SyntheticVideoSpec {
            frames,
            seed: 0,
            noise: 0.0,
            width: 256,
            height: 256,
        }
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn noise(mut self, sigma: f64) -> Self {
        self.noise = sigma;
        self
    }

    pub fn size(mut self, width: u32, height: u32) -> Self {
        self.width = width;
        self.height = height;
        self
    }

    pub fn generate(&self, model: &MorphableModel) -> Result<SyntheticVideo> {
        if self.frames == 0 {
            return Err(Error::EmptySequence(
                "synthetic video needs at least one frame",
            ));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::ImageSize {
                width: self.width,
                height: self.height,
            });
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::validation(
                "noise",
                format!("{} is not a valid standard deviation", self.noise),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let (w, h) = (self.width as f64, self.height as f64);

        let id_coeffs = DVector::from_fn(model.num_id(), |k, _| {
            let s = model.id_sigma[k];
            (0.8 * s * rng.sample::<f64, _>(rand_distr::StandardNormal)).clamp(-2.0 * s, 2.0 * s)
        });
        let exp_waves: Vec<(f64, Box<dyn Fn(usize) -> f64>)> = (0..model.num_exp())
            .map(|k| {
                let amp = rng.random_range(0.3..0.8) * model.exp_sigma[k];
                (
                    amp,
                    Box::new(oscillation(&mut rng, 80.0..160.0)) as Box<dyn Fn(usize) -> f64>,
                )
            })
            .collect();
        let exp_coeffs = DMatrix::from_fn(self.frames, model.num_exp(), |t, k| {
            exp_waves[k].0 * exp_waves[k].1(t)
        });

        let yaw = oscillation(&mut rng, 60.0..200.0);
        let pitch = oscillation(&mut rng, 60.0..200.0);
        let roll = oscillation(&mut rng, 60.0..200.0);
        let zoom = oscillation(&mut rng, 100.0..250.0);
        let drift_x = oscillation(&mut rng, 80.0..200.0);
        let drift_y = oscillation(&mut rng, 80.0..200.0);
        let blink_wave = oscillation(&mut rng, 30.0..60.0);
        let look_x = oscillation(&mut rng, 40.0..90.0);
        let look_y = oscillation(&mut rng, 40.0..90.0);
        let base_scale = 0.6 * h / 190.0;
        let cameras: Vec<CameraParams> = (0..self.frames)
            .map(|t| {
                let rotation = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), 0.1 * roll(t))
                    * UnitQuaternion::from_axis_angle(&Vector3::y_axis(), 0.35 * yaw(t))
                    * UnitQuaternion::from_axis_angle(&Vector3::x_axis(), 0.15 * pitch(t));
                CameraParams {
                    rotation,
                    translation: Vector2::new(
                        w * (0.5 + 0.03 * drift_x(t)),
                        h * (0.5 + 0.03 * drift_y(t)),
                    ),
                    scale: base_scale * (1.0 + 0.05 * zoom(t)),
                }
            })
            .collect();
        let truth = ShapeTrajectory {
            id_coeffs,
            exp_coeffs,
            cameras,
        };

        let noise = Normal::new(0.0, self.noise).expect("validated noise");
        let mut frames = Vec::with_capacity(self.frames);
        let mut gaze = Vec::with_capacity(self.frames);
        for t in 0..self.frames {
            let params: ShapeParams = truth.frame_params(t);
            let cam = &truth.cameras[t];
            let lm3 = model.synthesize_subset(&params, &model.landmark_indices)?;
            let mut points = project(&lm3, cam).points;
            if self.noise > 0.0 {
                for p in &mut points {
                    p.x += noise.sample(&mut rng);
                    p.y += noise.sample(&mut rng);
                }
            }
            frames.push(LandmarkFrame::new(points, None)?);

            let openness = 1.0 - 0.85 * blink_wave(t).max(0.0).powi(8);
            let look = Vector2::new(0.2 * look_x(t), 0.15 * look_y(t));
            let mut eyes = [None, None];
            for (slot, ring) in eyes
                .iter_mut()
                .zip([&model.left_eye_region, &model.right_eye_region])
            {
                let ring3 = model.synthesize_subset(&params, ring)?;
                let lid = project(&ring3, cam).points;
                let center = lid.iter().sum::<Vector2<f64>>() / lid.len() as f64;
                let eyelid: Vec<Vector2<f64>> = lid
                    .iter()
                    .map(|p| Vector2::new(p.x, center.y + openness * (p.y - center.y)))
                    .collect();
                let half_width = lid
                    .iter()
                    .map(|p| (p.x - center.x).abs())
                    .fold(0.0, f64::max);
                let radius = 0.35 * half_width;
                let iris_center = center + look * half_width;
                let iris = (openness > 0.4).then(|| {
                    (0..10)
                        .map(|i| {
                            let a = std::f64::consts::TAU * i as f64 / 10.0;
                            iris_center + radius * Vector2::new(a.cos(), a.sin())
                        })
                        .collect()
                });
                *slot = Some(EyePolygons { eyelid, iris });
            }
            let [left, right] = eyes;
            gaze.push(GazeFrame { left, right });
        }

        Ok(SyntheticVideo {
            truth,
            landmarks: LandmarkSequence::new_68(frames)?,
            gaze,
            width: self.width,
            height: self.height,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_model_validates() {
        minimal_model().validate().unwrap();
        assert!(minimal_model().orthonormality().within_tolerance());
    }

    #[test]
    fn synthetic_model_has_requested_dims_and_distinct_landmarks() {
        let m = SyntheticModelSpec::new(500, 20, 10)
            .seed(7)
            .build()
            .unwrap();
        assert_eq!((m.num_vertices(), m.num_id(), m.num_exp()), (500, 20, 10));
        let mut lm = m.landmark_indices.clone();
        lm.sort_unstable();
        lm.dedup();
        assert_eq!(lm.len(), NUM_LANDMARKS);
        assert_eq!(m.left_eye_region.len(), EYE_RING_SIZE);
    }

    #[test]
    fn bases_are_orthogonal_to_rigid_motion() {
        let m = SyntheticModelSpec::new(200, 5, 5).seed(2).build().unwrap();
        for q in rigid_tangents(&m.mean_shape) {
            assert!((m.id_basis.transpose() * &q).amax() < 1e-9);
            assert!((m.exp_basis.transpose() * &q).amax() < 1e-9);
        }
        assert!((m.id_basis.transpose() * &m.exp_basis).amax() < 1e-9);
    }

    #[test]
    fn same_seed_same_video() {
        let m = SyntheticModelSpec::new(120, 3, 2).seed(1).build().unwrap();
        let a = SyntheticVideoSpec::new(5)
            .seed(9)
            .noise(1.0)
            .generate(&m)
            .unwrap();
        let b = SyntheticVideoSpec::new(5)
            .seed(9)
            .noise(1.0)
            .generate(&m)
            .unwrap();
        assert_eq!(a.landmarks, b.landmarks);
        assert_eq!(a.truth, b.truth);
    }

    #[test]
    fn face_fits_inside_the_frame() {
        let m = SyntheticModelSpec::new(300, 4, 3).seed(1).build().unwrap();
        let v = SyntheticVideoSpec::new(40)
            .seed(3)
            .size(128, 128)
            .generate(&m)
            .unwrap();
        for f in &v.landmarks.frames {
            for p in &f.points {
                assert!(
                    p.x > 0.0 && p.x < 128.0 && p.y > 0.0 && p.y < 128.0,
                    "{p:?}"
                );
            }
        }
    }

    #[test]
    fn prime_vertex_count_is_rejected() {
        assert!(SyntheticModelSpec::new(211, 2, 2).build().is_err());
    }
}
