//! Scaled orthographic projection and closed-form pose initialization.
//!
//! Image coordinates have their origin at the top-left pixel corner with `y`
//! pointing down; pixel centres sit at half-integers. Camera-space `+z` points
//! toward the viewer, so larger depth means nearer.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector2, Vector3};

use crate::error::{Error, Result};

/// Relative singular-value threshold below which a 3D landmark set is treated
/// as rank deficient.
const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraParams {
    /// World to camera rotation.
    pub rotation: UnitQuaternion<f64>,
    /// Image-plane offset in pixels.
    pub translation: Vector2<f64>,
    /// Pixels per model unit.
    pub scale: f64,
}

impl CameraParams {
    pub fn new(
        rotation: UnitQuaternion<f64>,
        translation: Vector2<f64>,
        scale: f64,
    ) -> Result<Self> {
        let cam = CameraParams {
            rotation,
            translation,
            scale,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn identity() -> Self {
        CameraParams {
            rotation: UnitQuaternion::identity(),
            translation: Vector2::zeros(),
            scale: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let norm = self.rotation.as_ref().norm();
        if !((norm - 1.0).abs() <= 1e-9) {
            return Err(Error::validation(
                "rotation",
                format!("quaternion norm {norm} is not 1"),
            ));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::validation(
                "scale",
                format!("{} is not positive", self.scale),
            ));
        }
        if !self.translation.iter().all(|t| t.is_finite()) {
            return Err(Error::validation("translation", "non-finite component"));
        }
        Ok(())
    }

    /// Projects one point, returning pixel position and depth.
    #[inline]
    pub fn project_point(&self, v: &Vector3<f64>) -> (Vector2<f64>, f64) {
        let r = self.rotation * v;
        (
            Vector2::new(
                self.scale * r.x + self.translation.x,
                -self.scale * r.y + self.translation.y,
            ),
            r.z,
        )
    }

    /// The `2 × 3` linear part of the projection (scale, rotation and y flip).
    pub fn linear_part(&self) -> nalgebra::Matrix2x3<f64> {
        let r = self.rotation.to_rotation_matrix();
        let m = r.matrix();
        nalgebra::Matrix2x3::new(
            self.scale * m[(0, 0)],
            self.scale * m[(0, 1)],
            self.scale * m[(0, 2)],
            -self.scale * m[(1, 0)],
            -self.scale * m[(1, 1)],
            -self.scale * m[(1, 2)],
        )
    }

    /// The seven-value record `[axis-angle(3), tx, ty, 0, scale]` used in
    /// trajectory files.
    pub fn to_record(&self) -> [f64; 7] {
        let aa = self.rotation.scaled_axis();
        [
            aa.x,
            aa.y,
            aa.z,
            self.translation.x,
            self.translation.y,
            0.0,
            self.scale,
        ]
    }

    pub fn from_record(record: &[f64; 7]) -> Result<Self> {
        if record[5] != 0.0 {
            log::warn!(
                "ignoring non-zero depth translation {} in camera record",
                record[5]
            );
        }
        let rotation =
            UnitQuaternion::from_scaled_axis(Vector3::new(record[0], record[1], record[2]));
        CameraParams::new(rotation, Vector2::new(record[3], record[4]), record[6])
    }
}

/// Projected points and per-point depth.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub points: Vec<Vector2<f64>>,
    pub depth: Vec<f64>,
}

pub fn project(vertices: &[Vector3<f64>], cam: &CameraParams) -> Projection {
    let (points, depth) = vertices.iter().map(|v| cam.project_point(v)).unzip();
    Projection { points, depth }
}

/// Closed-form scaled-orthographic pose from 2D/3D correspondences.
///
/// Solves the least-squares affine map between the centred point sets, then
/// factors it into a scale and the first two rows of a proper rotation.
pub fn estimate_pose(
    landmarks2d: &[Vector2<f64>],
    landmarks3d: &[Vector3<f64>],
) -> Result<CameraParams> {
    Error::check_len("pose correspondences", landmarks3d.len(), landmarks2d.len())?;
    let count = landmarks2d.len();
    if count < 4 {
        return Err(Error::DegeneratePose(format!(
            "need at least 4 correspondences, got {count}"
        )));
    }
    if !landmarks2d.iter().all(|p| p.iter().all(|v| v.is_finite()))
        || !landmarks3d.iter().all(|p| p.iter().all(|v| v.is_finite()))
    {
        return Err(Error::DegeneratePose(
            "non-finite landmark coordinate".into(),
        ));
    }
    let inv = 1.0 / count as f64;
    let mean2: Vector2<f64> = landmarks2d.iter().sum::<Vector2<f64>>() * inv;
    let mean3: Vector3<f64> = landmarks3d.iter().sum::<Vector3<f64>>() * inv;

    // Normal equations of the affine fit, with image y flipped back to y-up.
    let mut xtx = Matrix3::zeros();
    let mut xty_u = Vector3::zeros();
    let mut xty_v = Vector3::zeros();
    for (p2, p3) in landmarks2d.iter().zip(landmarks3d) {
        let x = p3 - mean3;
        let d = p2 - mean2;
        xtx += x * x.transpose();
        xty_u += x * d.x;
        xty_v += x * (-d.y);
    }
    let eig = xtx.symmetric_eigen();
    let max_ev = eig.eigenvalues.max();
    let min_ev = eig.eigenvalues.min();
    if !(max_ev > 0.0) || min_ev <= RANK_TOLERANCE * max_ev {
        return Err(Error::DegeneratePose(
            "3D landmarks are rank deficient (collinear or coplanar)".into(),
        ));
    }
    let chol = xtx
        .cholesky()
        .ok_or_else(|| Error::DegeneratePose("singular 3D landmark scatter".into()))?;
    let row0 = chol.solve(&xty_u);
    let row1 = chol.solve(&xty_v);

    let n0 = row0.norm();
    let n1 = row1.norm();
    if !(n0 > 0.0 && n1 > 0.0) {
        return Err(Error::DegeneratePose("2D landmarks have no spread".into()));
    }
    let scale = 0.5 * (n0 + n1);
    let r0 = row0 / n0;
    let r1 = row1 - r0 * r0.dot(&row1);
    let r1_norm = r1.norm();
    if !(r1_norm > 0.0) {
        return Err(Error::DegeneratePose("affine rows are parallel".into()));
    }
    let r1 = r1 / r1_norm;
    let r2 = r0.cross(&r1);
    let rot = Matrix3::from_rows(&[r0.transpose(), r1.transpose(), r2.transpose()]);
    let rotation = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(rot));

    let centre = rotation * mean3;
    let translation = Vector2::new(mean2.x - scale * centre.x, mean2.y + scale * centre.y);
    CameraParams::new(rotation, translation, scale)
}

/// Weighted squared reprojection error of `cam`.
fn reprojection_cost(
    cam: &CameraParams,
    l2d: &[Vector2<f64>],
    l3d: &[Vector3<f64>],
    weights: &[f64],
) -> f64 {
    l2d.iter()
        .zip(l3d)
        .zip(weights)
        .map(|((p, v), w)| w * (cam.project_point(v).0 - p).norm_squared())
        .sum()
}

/// Gauss-Newton refinement of a pose on the weighted reprojection error,
/// starting from `init`. Never returns a pose with a larger error than `init`.
pub fn refine_pose(
    landmarks2d: &[Vector2<f64>],
    landmarks3d: &[Vector3<f64>],
    weights: &[f64],
    init: &CameraParams,
    max_iterations: usize,
) -> Result<CameraParams> {
    Error::check_len("pose correspondences", landmarks3d.len(), landmarks2d.len())?;
    Error::check_len("pose weights", landmarks2d.len(), weights.len())?;
    let mut cam = *init;
    let mut cost = reprojection_cost(&cam, landmarks2d, landmarks3d, weights);
    let flip = nalgebra::Matrix2x3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0);
    for _ in 0..max_iterations {
        // Unknowns: rotation increment ω (left-multiplied), scale, tx, ty.
        let mut jtj = nalgebra::Matrix6::<f64>::zeros();
        let mut jtr = nalgebra::Vector6::<f64>::zeros();
        for ((p, v), &w) in landmarks2d.iter().zip(landmarks3d).zip(weights) {
            if w == 0.0 {
                continue;
            }
            let rv = cam.rotation * v;
            let r = flip * rv * cam.scale + cam.translation - p;
            let d_omega = flip * (-rv.cross_matrix()) * cam.scale;
            let d_scale = flip * rv;
            let mut j = nalgebra::Matrix2x6::<f64>::zeros();
            j.fixed_view_mut::<2, 3>(0, 0).copy_from(&d_omega);
            j.fixed_view_mut::<2, 1>(0, 3).copy_from(&d_scale);
            j[(0, 4)] = 1.0;
            j[(1, 5)] = 1.0;
            jtj += j.transpose() * j * w;
            jtr += j.transpose() * r * w;
        }
        let Some(step) = jtj.cholesky().map(|c| -c.solve(&jtr)) else {
            break;
        };
        let candidate = CameraParams {
            rotation: UnitQuaternion::from_scaled_axis(step.fixed_rows::<3>(0).into_owned())
                * cam.rotation,
            scale: cam.scale + step[3],
            translation: cam.translation + Vector2::new(step[4], step[5]),
        };
        if !(candidate.scale > 0.0) {
            break;
        }
        let new_cost = reprojection_cost(&candidate, landmarks2d, landmarks3d, weights);
        if !(new_cost < cost) {
            break;
        }
        let converged = cost - new_cost <= 1e-15 * cost.max(f64::MIN_POSITIVE);
        cam = candidate;
        cost = new_cost;
        if converged {
            break;
        }
    }
    Ok(cam)
}

/// Geodesic angle between two rotations, in radians.
pub fn rotation_distance(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>) -> f64 {
    a.angle_to(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vector3<f64>> {
        (0..n)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-80.0..80.0),
                    rng.random_range(-100.0..100.0),
                    rng.random_range(-40.0..60.0),
                )
            })
            .collect()
    }

    fn random_camera(rng: &mut ChaCha8Rng) -> CameraParams {
        let axis = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        CameraParams::new(
            UnitQuaternion::from_scaled_axis(axis * rng.random_range(0.0..1.5)),
            Vector2::new(
                rng.random_range(-50.0..300.0),
                rng.random_range(-50.0..300.0),
            ),
            rng.random_range(0.2..5.0),
        )
        .unwrap()
    }

    #[test]
    fn refinement_recovers_perturbed_pose() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..50 {
            let pts = random_points(&mut rng, 30);
            let cam = random_camera(&mut rng);
            let obs = project(&pts, &cam).points;
            let start = CameraParams {
                rotation: UnitQuaternion::from_scaled_axis(Vector3::new(0.05, -0.04, 0.03))
                    * cam.rotation,
                translation: cam.translation + Vector2::new(3.0, -2.0),
                scale: cam.scale * 1.05,
            };
            let refined = refine_pose(&obs, &pts, &[1.0; 30], &start, 50).unwrap();
            assert!(rotation_distance(&refined.rotation, &cam.rotation) < 1e-9);
            assert!((refined.scale - cam.scale).abs() < 1e-9 * cam.scale);
            assert!((refined.translation - cam.translation).amax() < 1e-7);
        }
    }

    #[test]
    fn refinement_never_increases_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(78);
        let pts = random_points(&mut rng, 20);
        let cam = random_camera(&mut rng);
        let obs: Vec<_> = project(&pts, &cam)
            .points
            .iter()
            .map(|p| p + Vector2::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)))
            .collect();
        let weights: Vec<f64> = (0..20)
            .map(|i| if i % 5 == 0 { 0.0 } else { 1.0 })
            .collect();
        let start = estimate_pose(&obs, &pts).unwrap();
        let refined = refine_pose(&obs, &pts, &weights, &start, 20).unwrap();
        assert!(
            reprojection_cost(&refined, &obs, &pts, &weights)
                <= reprojection_cost(&start, &obs, &pts, &weights)
        );
    }

    #[test]
    fn identity_camera_flips_y() {
        let proj = project(&[Vector3::new(3.0, 4.0, 5.0)], &CameraParams::identity());
        assert_eq!(proj.points[0], Vector2::new(3.0, -4.0));
        assert_eq!(proj.depth[0], 5.0);
    }

    #[test]
    fn translation_shifts_points_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pts = random_points(&mut rng, 20);
        let mut cam = random_camera(&mut rng);
        cam.translation = Vector2::zeros();
        let base = project(&pts, &cam);
        cam.translation = Vector2::new(10.0, 20.0);
        let shifted = project(&pts, &cam);
        for (a, b) in base.points.iter().zip(&shifted.points) {
            assert_eq!(*b, a + Vector2::new(10.0, 20.0));
        }
    }

    #[test]
    fn projection_matches_stepwise_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let cam = random_camera(&mut rng);
            let pts = random_points(&mut rng, 10);
            let proj = project(&pts, &cam);
            let q = cam.rotation.quaternion();
            let (w, x, y, z) = (q.w, q.i, q.j, q.k);
            let rot = [
                [
                    1.0 - 2.0 * (y * y + z * z),
                    2.0 * (x * y - w * z),
                    2.0 * (x * z + w * y),
                ],
                [
                    2.0 * (x * y + w * z),
                    1.0 - 2.0 * (x * x + z * z),
                    2.0 * (y * z - w * x),
                ],
                [
                    2.0 * (x * z - w * y),
                    2.0 * (y * z + w * x),
                    1.0 - 2.0 * (x * x + y * y),
                ],
            ];
            for (i, p) in pts.iter().enumerate() {
                let mut r = [0.0; 3];
                for (row, out) in rot.iter().zip(r.iter_mut()) {
                    *out = row[0] * p.x + row[1] * p.y + row[2] * p.z;
                }
                let scaled = [cam.scale * r[0], cam.scale * r[1]];
                let flipped = [scaled[0], -scaled[1]];
                let expected = [
                    flipped[0] + cam.translation.x,
                    flipped[1] + cam.translation.y,
                ];
                assert!((proj.points[i].x - expected[0]).abs() < 1e-9);
                assert!((proj.points[i].y - expected[1]).abs() < 1e-9);
                assert!((proj.depth[i] - r[2]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn pre_rotation_equals_camera_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let cam = random_camera(&mut rng);
            let extra = random_camera(&mut rng).rotation;
            let pts = random_points(&mut rng, 15);
            let rotated: Vec<_> = pts.iter().map(|p| extra * p).collect();
            let composed = CameraParams {
                rotation: cam.rotation * extra,
                ..cam
            };
            let a = project(&rotated, &cam);
            let b = project(&pts, &composed);
            for (p, q) in a.points.iter().zip(&b.points) {
                assert!((p - q).amax() <= 1e-10);
            }
        }
    }

    #[test]
    fn identity_pose_is_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let pts = random_points(&mut rng, 68);
        let obs: Vec<_> = pts.iter().map(|p| Vector2::new(p.x, -p.y)).collect();
        let cam = estimate_pose(&obs, &pts).unwrap();
        assert!(cam.rotation.angle() < 1e-10);
        assert!((cam.scale - 1.0).abs() < 1e-10);
        assert!(cam.translation.amax() < 1e-9);
    }

    #[test]
    fn noiseless_pose_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let truth = random_camera(&mut rng);
            let pts = random_points(&mut rng, 68);
            let obs = project(&pts, &truth).points;
            let cam = estimate_pose(&obs, &pts).unwrap();
            assert!((cam.scale - truth.scale).abs() < 1e-9);
            assert!((cam.translation - truth.translation).amax() < 1e-9);
            assert!(rotation_distance(&cam.rotation, &truth.rotation) < 1e-9);
            assert!((cam.rotation.to_rotation_matrix().matrix().determinant() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn scaling_observations_scales_pose() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let truth = random_camera(&mut rng);
        let pts = random_points(&mut rng, 68);
        let obs = project(&pts, &truth).points;
        let base = estimate_pose(&obs, &pts).unwrap();
        let c = 2.5;
        let scaled: Vec<_> = obs.iter().map(|p| p * c).collect();
        let cam = estimate_pose(&scaled, &pts).unwrap();
        assert!((cam.scale - c * base.scale).abs() < 1e-9 * cam.scale);
        assert!(rotation_distance(&cam.rotation, &base.rotation) < 1e-10);
    }

    #[test]
    fn collinear_and_planar_landmarks_are_degenerate() {
        let line: Vec<_> = (0..68)
            .map(|i| Vector3::new(i as f64, 2.0 * i as f64, 0.5 * i as f64))
            .collect();
        let obs: Vec<_> = (0..68).map(|i| Vector2::new(i as f64, i as f64)).collect();
        assert!(matches!(
            estimate_pose(&obs, &line),
            Err(Error::DegeneratePose(_))
        ));
        let plane: Vec<_> = (0..68)
            .map(|i| Vector3::new((i % 9) as f64, (i / 9) as f64, 0.0))
            .collect();
        assert!(matches!(
            estimate_pose(&obs, &plane),
            Err(Error::DegeneratePose(_))
        ));
    }

    #[test]
    fn camera_record_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let cam = random_camera(&mut rng);
        let back = CameraParams::from_record(&cam.to_record()).unwrap();
        assert!(rotation_distance(&back.rotation, &cam.rotation) < 1e-12);
        assert_eq!(back.translation, cam.translation);
        assert_eq!(back.scale, cam.scale);
        assert_eq!(cam.to_record()[5], 0.0);
    }
}
