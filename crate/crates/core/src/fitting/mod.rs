//! Batch video fitting of a morphable model to 2D landmarks.
//!
//! The energy over a whole sequence is
//! `w_l·E_l + w_pr·E_pr + w_sm·E_sm`: confidence-weighted squared landmark
//! reprojection error, a sigma-normalized quadratic prior on all
//! coefficients, and squared second temporal differences of the expression
//! coefficients. Identity coefficients are shared by all frames. With the
//! cameras held fixed the energy is a linear least-squares problem, solved
//! under `±k·σ` box constraints by [`solver::solve_box_lsq`].

pub mod io;
pub mod solver;
pub mod system;

use nalgebra::{DMatrix, DVector, Vector2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{estimate_pose, refine_pose, CameraParams};
use crate::error::{Error, Result};
use crate::model::{MorphableModel, ShapeParams, NUM_LANDMARKS};
use solver::{solve_box_lsq, SolveResult, SolverOptions};
pub use system::{assemble_linear_system, RowGroup, VideoSystem};

/// Observed landmarks of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkFrame {
    pub points: Vec<Vector2<f64>>,
    /// Per-point weight in `[0, 1]`; all ones when the input has none.
    pub confidence: Vec<f64>,
}

impl LandmarkFrame {
    pub fn new(points: Vec<Vector2<f64>>, confidence: Option<Vec<f64>>) -> Result<Self> {
        if !points.iter().all(|p| p.x.is_finite() && p.y.is_finite()) {
            return Err(Error::validation(
                "landmarks",
                "non-finite landmark coordinate",
            ));
        }
        let confidence = match confidence {
            Some(c) => {
                Error::check_len("landmark confidences", points.len(), c.len())?;
                if let Some(bad) = c.iter().find(|c| !(0.0..=1.0).contains(*c)) {
                    return Err(Error::validation(
                        "confidence",
                        format!("{bad} is outside [0, 1]"),
                    ));
                }
                c
            }
            None => vec![1.0; points.len()],
        };
        Ok(LandmarkFrame { points, confidence })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSequence {
    pub frames: Vec<LandmarkFrame>,
}

impl LandmarkSequence {
    /// Requires at least one frame and the same landmark count in every frame.
    pub fn new(frames: Vec<LandmarkFrame>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or(Error::EmptySequence("landmark sequence has no frames"))?;
        let count = first.points.len();
        for f in &frames {
            Error::check_len("landmarks per frame", count, f.points.len())?;
        }
        Ok(LandmarkSequence { frames })
    }

    /// As [`LandmarkSequence::new`], additionally requiring 68 points per frame.
    pub fn new_68(frames: Vec<LandmarkFrame>) -> Result<Self> {
        let seq = Self::new(frames)?;
        Error::check_len(
            "landmarks per frame",
            NUM_LANDMARKS,
            seq.landmarks_per_frame(),
        )?;
        Ok(seq)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn landmarks_per_frame(&self) -> usize {
        self.frames.first().map_or(0, |f| f.points.len())
    }

    /// Adds `offset` to every landmark of every frame.
    pub fn translated(&self, offset: Vector2<f64>) -> Self {
        LandmarkSequence {
            frames: self
                .frames
                .iter()
                .map(|f| LandmarkFrame {
                    points: f.points.iter().map(|p| p + offset).collect(),
                    confidence: f.confidence.clone(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "camelCase")]
pub struct FitConfig {
    /// Landmark weight `w_l`; `None` selects `1 / (landmarks per frame · T)`.
    #[serde(rename = "w_l")]
    pub landmark_weight: Option<f64>,
    #[serde(rename = "w_pr")]
    pub prior_weight: f64,
    #[serde(rename = "w_sm")]
    pub smoothness_weight: f64,
    /// Box half-width in units of each component's sigma.
    pub bound_sigmas: f64,
    pub max_iterations: usize,
    pub grad_tolerance: f64,
    /// Rounds of per-frame pose re-estimation against the fitted shape.
    pub pose_alternations: usize,
    /// Alternation stops early once a round lowers the objective by less than
    /// this fraction.
    pub pose_tolerance: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            landmark_weight: None,
            prior_weight: 1e-3,
            smoothness_weight: 0.1,
            bound_sigmas: 3.0,
            max_iterations: 200,
            grad_tolerance: 1e-8,
            pose_alternations: 2,
            pose_tolerance: 1e-12,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(w) = self.landmark_weight {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::validation(
                    "w_l",
                    format!("{w} must be non-negative"),
                ));
            }
        }
        for (name, w) in [
            ("w_pr", self.prior_weight),
            ("w_sm", self.smoothness_weight),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::validation(name, format!("{w} must be non-negative")));
            }
        }
        if !(self.bound_sigmas > 0.0) {
            return Err(Error::validation("boundSigmas", "must be positive"));
        }
        if !(self.grad_tolerance > 0.0) {
            return Err(Error::validation("gradTolerance", "must be positive"));
        }
        if !(self.pose_tolerance >= 0.0 && self.pose_tolerance.is_finite()) {
            return Err(Error::validation("poseTolerance", "must be non-negative"));
        }
        Ok(())
    }

    pub fn effective_landmark_weight(&self, frames: usize, per_frame: usize) -> f64 {
        self.landmark_weight
            .unwrap_or_else(|| 1.0 / (per_frame.max(1) * frames.max(1)) as f64)
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            max_iterations: self.max_iterations,
            grad_tolerance: self.grad_tolerance,
        }
    }
}

/// Shared identity, per-frame expressions and per-frame cameras.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeTrajectory {
    pub id_coeffs: DVector<f64>,
    /// `T × n_e`, one row per frame.
    pub exp_coeffs: DMatrix<f64>,
    pub cameras: Vec<CameraParams>,
}

impl ShapeTrajectory {
    pub fn num_frames(&self) -> usize {
        self.cameras.len()
    }

    pub fn frame_params(&self, t: usize) -> ShapeParams {
        ShapeParams {
            id_coeffs: self.id_coeffs.clone(),
            exp_coeffs: self.exp_coeffs.row(t).transpose(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cameras.is_empty() {
            return Err(Error::EmptySequence("trajectory has no frames"));
        }
        Error::check_len(
            "expression rows",
            self.cameras.len(),
            self.exp_coeffs.nrows(),
        )?;
        for cam in &self.cameras {
            cam.validate()?;
        }
        if !self
            .id_coeffs
            .iter()
            .chain(self.exp_coeffs.iter())
            .all(|v| v.is_finite())
        {
            return Err(Error::validation("coefficients", "non-finite coefficient"));
        }
        Ok(())
    }

    pub fn check_model(&self, model: &MorphableModel) -> Result<()> {
        Error::check_len(
            "identity coefficients",
            model.num_id(),
            self.id_coeffs.len(),
        )?;
        Error::check_len(
            "expression coefficients",
            model.num_exp(),
            self.exp_coeffs.ncols(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EnergyBreakdown {
    pub total: f64,
    pub landmark_term: f64,
    pub prior_term: f64,
    pub smoothness_term: f64,
}

/// Evaluates the energy directly from the model, independent of the
/// assembled linear system.
pub fn energy(
    model: &MorphableModel,
    landmarks: &LandmarkSequence,
    traj: &ShapeTrajectory,
    cfg: &FitConfig,
) -> Result<EnergyBreakdown> {
    let frames = landmarks.len();
    Error::check_len("trajectory frames", frames, traj.num_frames())?;
    traj.check_model(model)?;
    let per_frame = landmarks.landmarks_per_frame();
    Error::check_len(
        "landmarks per frame",
        model.landmark_indices.len(),
        per_frame,
    )?;

    let per_frame_errors: Vec<f64> = (0..frames)
        .into_par_iter()
        .map(|t| -> Result<f64> {
            let verts = model.landmark_vertices(&traj.frame_params(t))?;
            let cam = &traj.cameras[t];
            let frame = &landmarks.frames[t];
            Ok(verts
                .iter()
                .zip(&frame.points)
                .zip(&frame.confidence)
                .map(|((v, l), c)| c * (cam.project_point(v).0 - l).norm_squared())
                .sum())
        })
        .collect::<Result<_>>()?;
    let landmark_term: f64 = per_frame_errors.iter().sum();

    let mut prior_term: f64 = traj
        .id_coeffs
        .iter()
        .zip(model.id_sigma.iter())
        .map(|(s, sigma)| (s / sigma).powi(2))
        .sum();
    for t in 0..frames {
        for k in 0..model.num_exp() {
            prior_term += (traj.exp_coeffs[(t, k)] / model.exp_sigma[k]).powi(2);
        }
    }

    let mut smoothness_term = 0.0;
    for t in 1..frames.saturating_sub(1) {
        for k in 0..model.num_exp() {
            let dd = traj.exp_coeffs[(t + 1, k)] - 2.0 * traj.exp_coeffs[(t, k)]
                + traj.exp_coeffs[(t - 1, k)];
            smoothness_term += dd * dd;
        }
    }

    let w_l = cfg.effective_landmark_weight(frames, per_frame);
    Ok(EnergyBreakdown {
        total: w_l * landmark_term
            + cfg.prior_weight * prior_term
            + cfg.smoothness_weight * smoothness_term,
        landmark_term,
        prior_term,
        smoothness_term,
    })
}

/// Mean Euclidean distance between observed and projected landmarks, over
/// all points with non-zero confidence.
pub fn mean_reprojection_error(
    model: &MorphableModel,
    landmarks: &LandmarkSequence,
    traj: &ShapeTrajectory,
) -> Result<f64> {
    Error::check_len("trajectory frames", landmarks.len(), traj.num_frames())?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (t, frame) in landmarks.frames.iter().enumerate() {
        let verts = model.landmark_vertices(&traj.frame_params(t))?;
        for ((v, l), c) in verts.iter().zip(&frame.points).zip(&frame.confidence) {
            if *c > 0.0 {
                sum += (traj.cameras[t].project_point(v).0 - l).norm();
                count += 1;
            }
        }
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub trajectory: ShapeTrajectory,
    pub energy: EnergyBreakdown,
    /// Solver iterations summed over all shape solves.
    pub iterations: usize,
    /// Whether the final shape solve met its first-order tolerance.
    pub converged: bool,
    /// The final solve's objective sequence.
    pub objective_history: Vec<f64>,
    pub mean_reprojection_error: f64,
}

impl FitResult {
    /// Objective value reported by the solver for the final solve.
    pub fn solver_objective(&self) -> f64 {
        *self.objective_history.last().expect("non-empty history")
    }
}

/// Per-frame poses against the given per-frame 3D landmarks: closed form when
/// no previous cameras are given, otherwise a refinement of those.
fn estimate_cameras(
    landmarks: &LandmarkSequence,
    shapes: &[Vec<nalgebra::Vector3<f64>>],
    previous: Option<&[CameraParams]>,
) -> Result<Vec<CameraParams>> {
    landmarks
        .frames
        .par_iter()
        .zip(shapes.par_iter())
        .enumerate()
        .map(|(t, (frame, shape))| {
            if let Some(prev) = previous {
                return refine_pose(
                    &frame.points,
                    shape,
                    &frame.confidence,
                    &prev[t],
                    POSE_REFINE_ITERATIONS,
                );
            }
            // Zero-confidence points are excluded from the pose fit.
            let (obs, pts): (Vec<_>, Vec<_>) = frame
                .points
                .iter()
                .zip(shape)
                .zip(&frame.confidence)
                .filter(|(_, c)| **c > 0.0)
                .map(|((p, v), _)| (*p, *v))
                .unzip();
            estimate_pose(&obs, &pts).map_err(|e| match e {
                Error::DegeneratePose(msg) => Error::DegeneratePose(format!("frame {t}: {msg}")),
                other => other,
            })
        })
        .collect()
}

const POSE_REFINE_ITERATIONS: usize = 20;

/// Fits one shared identity, per-frame expressions and per-frame cameras to a
/// landmark sequence.
pub fn fit_video(
    model: &MorphableModel,
    landmarks: &LandmarkSequence,
    cfg: &FitConfig,
) -> Result<FitResult> {
    cfg.validate()?;
    if landmarks.is_empty() {
        return Err(Error::EmptySequence("landmark sequence has no frames"));
    }
    let frames = landmarks.len();
    Error::check_len(
        "landmarks per frame",
        model.landmark_indices.len(),
        landmarks.landmarks_per_frame(),
    )?;

    let mean_landmarks = model.landmark_vertices(&ShapeParams::zeros(model))?;
    let mut cameras = estimate_cameras(landmarks, &vec![mean_landmarks; frames], None)?;

    let options = cfg.solver_options();
    let mut theta = DVector::zeros(model.num_id() + frames * model.num_exp());
    let mut total_iterations = 0;
    let mut last: Option<(VideoSystem, SolveResult)> = None;
    for round in 0..=cfg.pose_alternations {
        if round > 0 {
            let sys = &last.as_ref().expect("previous round").0;
            let shapes = (0..frames)
                .map(|t| model.landmark_vertices(&sys.frame_params(&theta, t)))
                .collect::<Result<Vec<_>>>()?;
            cameras = estimate_cameras(landmarks, &shapes, Some(&cameras))?;
        }
        let sys = assemble_linear_system(model, landmarks, &cameras, cfg)?;
        let result = solve_box_lsq(&sys, &theta, &options)?;
        total_iterations += result.iterations;
        theta = result.theta.clone();
        let stalled = last.as_ref().is_some_and(|(_, prev)| {
            prev.objective() - result.objective() <= cfg.pose_tolerance * prev.objective()
        });
        last = Some((sys, result));
        if stalled {
            break;
        }
    }
    let (sys, result) = last.expect("at least one solve");
    let (id_coeffs, exp_coeffs) = sys.unpack(&result.theta);
    let trajectory = ShapeTrajectory {
        id_coeffs,
        exp_coeffs,
        cameras,
    };
    let energy = energy(model, landmarks, &trajectory, cfg)?;
    let mean_reprojection_error = mean_reprojection_error(model, landmarks, &trajectory)?;
    Ok(FitResult {
        trajectory,
        energy,
        iterations: total_iterations,
        converged: result.converged,
        objective_history: result.objective_history,
        mean_reprojection_error,
    })
}
