//! Source-to-target parameter transfer, gaze re-anchoring, and the per-pixel
//! image error metric.

pub mod metrics;

use nalgebra::{Complex, Vector2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::project;
use crate::conditioning::GazeFrame;
use crate::error::{Error, Result};
use crate::fitting::ShapeTrajectory;
use crate::model::MorphableModel;
pub use metrics::{per_pixel_error, sequence_error, PixelError, SequenceReport};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    pub target: String,
}

/// A trajectory whose identity and scale come from the target and whose
/// expressions and head motion come from the source.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridTrajectory {
    pub trajectory: ShapeTrajectory,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HybridOptions {
    /// Shift source translations so the head occupies the target's image region.
    pub recenter_translation: bool,
}

impl Default for HybridOptions {
    fn default() -> Self {
        HybridOptions {
            recenter_translation: true,
        }
    }
}

fn mean_translation(traj: &ShapeTrajectory) -> Vector2<f64> {
    traj.cameras
        .iter()
        .map(|c| c.translation)
        .sum::<Vector2<f64>>()
        / traj.num_frames() as f64
}

/// Combines target identity and mean target scale with source expressions,
/// rotations and (optionally recentred) translations.
pub fn compose_hybrid(
    source: &ShapeTrajectory,
    target: &ShapeTrajectory,
    options: &HybridOptions,
) -> Result<HybridTrajectory> {
    if target.num_frames() == 0 {
        return Err(Error::EmptySequence("target fit has no frames"));
    }
    if source.num_frames() == 0 {
        return Err(Error::EmptySequence("source fit has no frames"));
    }
    Error::check_len(
        "identity coefficients",
        target.id_coeffs.len(),
        source.id_coeffs.len(),
    )?;
    Error::check_len(
        "expression coefficients",
        target.exp_coeffs.ncols(),
        source.exp_coeffs.ncols(),
    )?;

    let scale = target.cameras.iter().map(|c| c.scale).sum::<f64>() / target.num_frames() as f64;
    let shift = if options.recenter_translation {
        mean_translation(target) - mean_translation(source)
    } else {
        Vector2::zeros()
    };
    let cameras = source
        .cameras
        .iter()
        .map(|c| {
            let mut cam = *c;
            cam.scale = scale;
            cam.translation = c.translation + shift;
            cam
        })
        .collect();
    Ok(HybridTrajectory {
        trajectory: ShapeTrajectory {
            id_coeffs: target.id_coeffs.clone(),
            exp_coeffs: source.exp_coeffs.clone(),
            cameras,
        },
        provenance: Provenance::default(),
    })
}

/// Least-squares 2D similarity `p ↦ m·p + t` (complex `m`) taking `from`
/// onto `to`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity2 {
    pub linear: Complex<f64>,
    pub translation: Vector2<f64>,
}

impl Similarity2 {
    pub fn apply(&self, p: Vector2<f64>) -> Vector2<f64> {
        let z = self.linear * Complex::new(p.x, p.y);
        Vector2::new(z.re, z.im) + self.translation
    }

    pub fn fit(from: &[Vector2<f64>], to: &[Vector2<f64>]) -> Option<Self> {
        if from.is_empty() || from.len() != to.len() {
            return None;
        }
        let inv = 1.0 / from.len() as f64;
        let mean_from = from.iter().sum::<Vector2<f64>>() * inv;
        let mean_to = to.iter().sum::<Vector2<f64>>() * inv;
        let mut num = Complex::new(0.0, 0.0);
        let mut den = 0.0;
        for (a, b) in from.iter().zip(to) {
            let a = Complex::new(a.x - mean_from.x, a.y - mean_from.y);
            let b = Complex::new(b.x - mean_to.x, b.y - mean_to.y);
            num += a.conj() * b;
            den += a.norm_sqr();
        }
        let spread = from.iter().map(|p| p.amax()).fold(1.0f64, f64::max);
        if !(den > 1e-18 * spread * spread * from.len() as f64) {
            return None;
        }
        let linear = num / den;
        let mapped = linear * Complex::new(mean_from.x, mean_from.y);
        Some(Similarity2 {
            linear,
            translation: mean_to - Vector2::new(mapped.re, mapped.im),
        })
    }
}

/// Projected eye-socket rings `(left, right)` of frame `t`.
fn eye_rings(
    model: &MorphableModel,
    traj: &ShapeTrajectory,
    t: usize,
) -> Result<[Vec<Vector2<f64>>; 2]> {
    let params = traj.frame_params(t);
    let cam = &traj.cameras[t];
    let left = model.synthesize_subset(&params, &model.left_eye_region)?;
    let right = model.synthesize_subset(&params, &model.right_eye_region)?;
    Ok([project(&left, cam).points, project(&right, cam).points])
}

/// Per-frame, per-eye similarities taking the source fit's eye rings onto
/// the hybrid's.
pub fn eye_similarities(
    source_fit: &ShapeTrajectory,
    hybrid: &ShapeTrajectory,
    model: &MorphableModel,
) -> Result<Vec<[Similarity2; 2]>> {
    Error::check_len(
        "hybrid frames",
        source_fit.num_frames(),
        hybrid.num_frames(),
    )?;
    source_fit.check_model(model)?;
    hybrid.check_model(model)?;
    (0..source_fit.num_frames())
        .into_par_iter()
        .map(|t| {
            let src = eye_rings(model, source_fit, t)?;
            let dst = eye_rings(model, hybrid, t)?;
            let fit = |eye: usize| {
                Similarity2::fit(&src[eye], &dst[eye]).ok_or_else(|| Error::DegenerateRing {
                    frame: t,
                    message: format!(
                        "{} eye ring projects to coincident points",
                        if eye == 0 { "left" } else { "right" }
                    ),
                })
            };
            Ok([fit(0)?, fit(1)?])
        })
        .collect()
}

/// Moves the source gaze polygons so the eyes land where the hybrid face
/// renders them.
pub fn adapt_gaze(
    source_gaze: &[GazeFrame],
    source_fit: &ShapeTrajectory,
    hybrid: &HybridTrajectory,
    model: &MorphableModel,
) -> Result<Vec<GazeFrame>> {
    Error::check_len("gaze frames", source_fit.num_frames(), source_gaze.len())?;
    let sims = eye_similarities(source_fit, &hybrid.trajectory, model)?;
    Ok(source_gaze
        .iter()
        .zip(&sims)
        .map(|(g, s)| g.map_points(|eye, p| s[eye].apply(p)))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{SyntheticModelSpec, SyntheticVideoSpec};

    fn fits() -> (
        MorphableModel,
        ShapeTrajectory,
        ShapeTrajectory,
        Vec<GazeFrame>,
    ) {
        let model = SyntheticModelSpec::new(300, 4, 3).seed(1).build().unwrap();
        let source = SyntheticVideoSpec::new(6)
            .seed(10)
            .generate(&model)
            .unwrap();
        let target = SyntheticVideoSpec::new(4)
            .seed(20)
            .generate(&model)
            .unwrap();
        (model, source.truth, target.truth, source.gaze)
    }

    #[test]
    fn hybrid_takes_identity_from_target_and_motion_from_source() {
        let (_, source, target, _) = fits();
        let hybrid = compose_hybrid(&source, &target, &HybridOptions::default()).unwrap();
        let h = &hybrid.trajectory;
        assert_eq!(h.id_coeffs, target.id_coeffs);
        assert_eq!(h.exp_coeffs, source.exp_coeffs);
        let mean_target_scale: f64 = target.cameras.iter().map(|c| c.scale).sum::<f64>() / 4.0;
        for (hc, sc) in h.cameras.iter().zip(&source.cameras) {
            assert_eq!(hc.rotation, sc.rotation);
            assert_eq!(hc.scale, mean_target_scale);
        }
        let mean_h: Vector2<f64> = h
            .cameras
            .iter()
            .map(|c| c.translation)
            .sum::<Vector2<f64>>()
            / 6.0;
        let mean_t: Vector2<f64> = target
            .cameras
            .iter()
            .map(|c| c.translation)
            .sum::<Vector2<f64>>()
            / 4.0;
        assert!((mean_h - mean_t).amax() < 1e-9);
    }

    #[test]
    fn self_reenactment_keeps_motion() {
        let (_, source, _, _) = fits();
        let hybrid = compose_hybrid(&source, &source, &HybridOptions::default()).unwrap();
        for (hc, sc) in hybrid.trajectory.cameras.iter().zip(&source.cameras) {
            assert_eq!(hc.rotation, sc.rotation);
            assert_eq!(hc.translation, sc.translation);
        }
        assert_eq!(hybrid.trajectory.exp_coeffs, source.exp_coeffs);
    }

    #[test]
    fn recentering_can_be_disabled() {
        let (_, source, target, _) = fits();
        let hybrid = compose_hybrid(
            &source,
            &target,
            &HybridOptions {
                recenter_translation: false,
            },
        )
        .unwrap();
        for (hc, sc) in hybrid.trajectory.cameras.iter().zip(&source.cameras) {
            assert_eq!(hc.translation, sc.translation);
        }
    }

    #[test]
    fn identity_is_stable_under_recomposition() {
        let (_, source, target, _) = fits();
        let once = compose_hybrid(&source, &target, &HybridOptions::default()).unwrap();
        let twice = compose_hybrid(&once.trajectory, &target, &HybridOptions::default()).unwrap();
        assert_eq!(twice.trajectory.id_coeffs, target.id_coeffs);
    }

    #[test]
    fn mismatched_dimensions_are_rejected() {
        let (_, source, mut target, _) = fits();
        target.exp_coeffs = target.exp_coeffs.columns(0, 2).into_owned();
        assert!(compose_hybrid(&source, &target, &HybridOptions::default()).is_err());
    }

    #[test]
    fn gaze_unchanged_when_hybrid_equals_source() {
        let (model, source, _, gaze) = fits();
        let hybrid = HybridTrajectory {
            trajectory: source.clone(),
            provenance: Provenance::default(),
        };
        let adapted = adapt_gaze(&gaze, &source, &hybrid, &model).unwrap();
        for (a, g) in adapted.iter().zip(&gaze) {
            for (ea, eg) in a.eyes().zip(g.eyes()) {
                for (p, q) in ea.eyelid.iter().zip(&eg.eyelid) {
                    assert!((p - q).amax() <= 1e-9);
                }
            }
        }
    }

    #[test]
    fn gaze_follows_pure_translation() {
        let (model, source, _, gaze) = fits();
        let mut shifted = source.clone();
        let d = Vector2::new(7.25, -3.5);
        for c in &mut shifted.cameras {
            c.translation += d;
        }
        let hybrid = HybridTrajectory {
            trajectory: shifted,
            provenance: Provenance::default(),
        };
        let adapted = adapt_gaze(&gaze, &source, &hybrid, &model).unwrap();
        for (a, g) in adapted.iter().zip(&gaze) {
            for (ea, eg) in a.eyes().zip(g.eyes()) {
                for (p, q) in ea
                    .eyelid
                    .iter()
                    .chain(ea.iris.iter().flatten())
                    .zip(eg.eyelid.iter().chain(eg.iris.iter().flatten()))
                {
                    assert!((p - (q + d)).amax() <= 1e-9);
                }
            }
        }
    }

    #[test]
    fn coincident_ring_is_degenerate() {
        let from = vec![Vector2::new(1.0, 1.0); 5];
        assert!(Similarity2::fit(&from, &from).is_none());
    }
}
