//! The stacked, affine residual of the video energy for fixed cameras.
//!
//! Unknowns are ordered `θ = [s_id; s_exp(0); …; s_exp(T−1)]`. Residual rows
//! come in three groups, in this order:
//!
//! * landmark rows, two per landmark per frame, each scaled by `√(w_l·c)`;
//! * prior rows, one per unknown, `√w_pr · θ_k / σ_k`;
//! * smoothness rows, `n_e` per interior frame,
//!   `√w_sm · (e(t+1) − 2e(t) + e(t−1))`.
//!
//! Only the landmark rows are stored densely (one `2K × (n_i + n_e)` block per
//! frame). The normal matrix is kept as an expression-band / identity-border
//! block structure and factorized without ever forming the full matrix.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::{FitConfig, LandmarkSequence};
use crate::camera::CameraParams;
use crate::error::{Error, Result};
use crate::fitting::solver::LinearLeastSquares;
use crate::model::{MorphableModel, ShapeParams};

#[derive(Debug, Clone)]
struct FrameBlock {
    /// `2K × (n_i + n_e)`, already weighted.
    jacobian: DMatrix<f64>,
    /// Weighted residual at zero coefficients.
    offset: DVector<f64>,
}

/// The assembled linear least-squares problem of one video.
#[derive(Debug, Clone)]
pub struct VideoSystem {
    num_id: usize,
    num_exp: usize,
    frames: usize,
    blocks: Vec<FrameBlock>,
    /// `√w_pr / σ` per unknown.
    prior: DVector<f64>,
    /// `√w_sm`.
    smooth: f64,
    lower: DVector<f64>,
    upper: DVector<f64>,
    normal: BlockNormal,
}

/// Which residual group a row belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowGroup {
    Landmark,
    Prior,
    Smoothness,
}

/// Assembles the video system for fixed cameras.
pub fn assemble_linear_system(
    model: &MorphableModel,
    landmarks: &LandmarkSequence,
    cameras: &[CameraParams],
    cfg: &FitConfig,
) -> Result<VideoSystem> {
    cfg.validate()?;
    let frames = landmarks.len();
    if frames == 0 {
        return Err(Error::EmptySequence("landmark sequence has no frames"));
    }
    Error::check_len("cameras", frames, cameras.len())?;
    let per_frame = landmarks.landmarks_per_frame();
    Error::check_len(
        "landmarks per frame",
        model.landmark_indices.len(),
        per_frame,
    )?;

    let num_id = model.num_id();
    let num_exp = model.num_exp();
    let w_l = cfg.effective_landmark_weight(frames, per_frame);

    // Rows of the bases restricted to the landmark vertices, shared by all frames.
    let mean = model.mean_shape.clone();
    let lm_rows: Vec<[usize; 3]> = model
        .landmark_indices
        .iter()
        .map(|&i| [3 * i as usize, 3 * i as usize + 1, 3 * i as usize + 2])
        .collect();

    let blocks: Vec<FrameBlock> = (0..frames)
        .into_par_iter()
        .map(|t| {
            let cam = &cameras[t];
            let lin = cam.linear_part();
            let frame = &landmarks.frames[t];
            let mut jacobian = DMatrix::zeros(2 * per_frame, num_id + num_exp);
            let mut offset = DVector::zeros(2 * per_frame);
            for (j, rows) in lm_rows.iter().enumerate() {
                let weight = (w_l * frame.confidence[j]).sqrt();
                let mean_v = nalgebra::Vector3::new(mean[rows[0]], mean[rows[1]], mean[rows[2]]);
                let proj = lin * mean_v + cam.translation;
                let obs = frame.points[j];
                offset[2 * j] = weight * (proj.x - obs.x);
                offset[2 * j + 1] = weight * (proj.y - obs.y);
                for out in 0..2 {
                    let coeffs = [lin[(out, 0)], lin[(out, 1)], lin[(out, 2)]];
                    for k in 0..num_id {
                        let mut acc = 0.0;
                        for axis in 0..3 {
                            acc += coeffs[axis] * model.id_basis[(rows[axis], k)];
                        }
                        jacobian[(2 * j + out, k)] = weight * acc;
                    }
                    for k in 0..num_exp {
                        let mut acc = 0.0;
                        for axis in 0..3 {
                            acc += coeffs[axis] * model.exp_basis[(rows[axis], k)];
                        }
                        jacobian[(2 * j + out, num_id + k)] = weight * acc;
                    }
                }
            }
            FrameBlock { jacobian, offset }
        })
        .collect();

    let num_vars = num_id + frames * num_exp;
    let prior_scale = cfg.prior_weight.sqrt();
    let prior = DVector::from_fn(num_vars, |i, _| {
        if i < num_id {
            prior_scale / model.id_sigma[i]
        } else {
            prior_scale / model.exp_sigma[(i - num_id) % num_exp.max(1)]
        }
    });
    let lower = DVector::from_fn(num_vars, |i, _| {
        let sigma = if i < num_id {
            model.id_sigma[i]
        } else {
            model.exp_sigma[(i - num_id) % num_exp.max(1)]
        };
        -cfg.bound_sigmas * sigma
    });
    let upper = -&lower;
    let smooth = cfg.smoothness_weight.sqrt();
    let normal = BlockNormal::build(num_id, num_exp, &blocks, &prior, smooth);

    Ok(VideoSystem {
        num_id,
        num_exp,
        frames,
        blocks,
        prior,
        smooth,
        lower,
        upper,
        normal,
    })
}

impl VideoSystem {
    pub fn num_id(&self) -> usize {
        self.num_id
    }

    pub fn num_exp(&self) -> usize {
        self.num_exp
    }

    pub fn num_frames(&self) -> usize {
        self.frames
    }

    pub fn num_landmark_rows(&self) -> usize {
        self.blocks.iter().map(|b| b.offset.len()).sum()
    }

    pub fn num_smoothness_rows(&self) -> usize {
        self.frames.saturating_sub(2) * self.num_exp
    }

    pub fn num_rows(&self) -> usize {
        self.num_landmark_rows() + self.prior.len() + self.num_smoothness_rows()
    }

    pub fn row_group(&self, row: usize) -> RowGroup {
        let lm = self.num_landmark_rows();
        if row < lm {
            RowGroup::Landmark
        } else if row < lm + self.prior.len() {
            RowGroup::Prior
        } else {
            RowGroup::Smoothness
        }
    }

    /// Residual at `θ = 0`.
    pub fn residual_offset(&self) -> DVector<f64> {
        let mut r = DVector::zeros(self.num_rows());
        let mut row = 0;
        for b in &self.blocks {
            r.rows_mut(row, b.offset.len()).copy_from(&b.offset);
            row += b.offset.len();
        }
        r
    }

    /// Dense Jacobian. Intended for checks on small problems.
    pub fn jacobian_dense(&self) -> DMatrix<f64> {
        let n = self.num_vars();
        let mut jac = DMatrix::zeros(self.num_rows(), n);
        for k in 0..n {
            let mut e = DVector::zeros(n);
            e[k] = 1.0;
            jac.set_column(k, &self.apply_jacobian(&e));
        }
        jac
    }

    /// Splits `θ` into shared identity and per-frame expression coefficients.
    pub fn unpack(&self, theta: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let id = theta.rows(0, self.num_id).into_owned();
        let exp = DMatrix::from_fn(self.frames, self.num_exp, |t, k| {
            theta[self.num_id + t * self.num_exp + k]
        });
        (id, exp)
    }

    pub fn pack(&self, id: &DVector<f64>, exp: &DMatrix<f64>) -> DVector<f64> {
        let mut theta = DVector::zeros(self.num_vars());
        theta.rows_mut(0, self.num_id).copy_from(id);
        for t in 0..self.frames {
            for k in 0..self.num_exp {
                theta[self.num_id + t * self.num_exp + k] = exp[(t, k)];
            }
        }
        theta
    }

    pub fn frame_params(&self, theta: &DVector<f64>, t: usize) -> ShapeParams {
        ShapeParams {
            id_coeffs: theta.rows(0, self.num_id).into_owned(),
            exp_coeffs: theta
                .rows(self.num_id + t * self.num_exp, self.num_exp)
                .into_owned(),
        }
    }

    fn frame_slice<'a>(&self, theta: &'a DVector<f64>, t: usize) -> nalgebra::DVectorView<'a, f64> {
        theta.rows(self.num_id + t * self.num_exp, self.num_exp)
    }

    fn frame_jacobian_times(&self, t: usize, x: &DVector<f64>) -> DVector<f64> {
        let b = &self.blocks[t];
        let id_part = b.jacobian.columns(0, self.num_id) * x.rows(0, self.num_id);
        let exp_part = b.jacobian.columns(self.num_id, self.num_exp) * self.frame_slice(x, t);
        id_part + exp_part
    }
}

impl LinearLeastSquares for VideoSystem {
    fn num_vars(&self) -> usize {
        self.num_id + self.frames * self.num_exp
    }

    fn lower(&self) -> &DVector<f64> {
        &self.lower
    }

    fn upper(&self) -> &DVector<f64> {
        &self.upper
    }

    fn residuals(&self, theta: &DVector<f64>) -> DVector<f64> {
        let mut r = self.apply_jacobian(theta);
        let mut row = 0;
        for b in &self.blocks {
            let mut seg = r.rows_mut(row, b.offset.len());
            seg += &b.offset;
            row += b.offset.len();
        }
        r
    }

    fn apply_jacobian(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.num_rows());
        let parts: Vec<DVector<f64>> = (0..self.frames)
            .into_par_iter()
            .map(|t| self.frame_jacobian_times(t, x))
            .collect();
        let mut row = 0;
        for p in parts {
            out.rows_mut(row, p.len()).copy_from(&p);
            row += p.len();
        }
        for k in 0..x.len() {
            out[row + k] = self.prior[k] * x[k];
        }
        row += x.len();
        let ne = self.num_exp;
        for t in 1..self.frames.saturating_sub(1) {
            let prev = self.frame_slice(x, t - 1);
            let cur = self.frame_slice(x, t);
            let next = self.frame_slice(x, t + 1);
            for k in 0..ne {
                out[row + k] = self.smooth * (next[k] - 2.0 * cur[k] + prev[k]);
            }
            row += ne;
        }
        out
    }

    fn apply_jacobian_transpose(&self, r: &DVector<f64>) -> DVector<f64> {
        let ni = self.num_id;
        let ne = self.num_exp;
        let mut out = DVector::zeros(self.num_vars());
        let mut starts = Vec::with_capacity(self.frames);
        let mut row = 0;
        for b in &self.blocks {
            starts.push(row);
            row += b.offset.len();
        }
        let parts: Vec<DVector<f64>> = (0..self.frames)
            .into_par_iter()
            .map(|t| {
                let b = &self.blocks[t];
                b.jacobian.tr_mul(&r.rows(starts[t], b.offset.len()))
            })
            .collect();
        // Fixed frame order keeps the identity accumulation deterministic.
        for (t, p) in parts.iter().enumerate() {
            let mut id = out.rows_mut(0, ni);
            id += p.rows(0, ni);
            let mut e = out.rows_mut(ni + t * ne, ne);
            e += p.rows(ni, ne);
        }
        for k in 0..out.len() {
            out[k] += self.prior[k] * r[row + k];
        }
        row += out.len();
        for t in 1..self.frames.saturating_sub(1) {
            for k in 0..ne {
                let v = self.smooth * r[row + k];
                out[ni + (t - 1) * ne + k] += v;
                out[ni + t * ne + k] -= 2.0 * v;
                out[ni + (t + 1) * ne + k] += v;
            }
            row += ne;
        }
        out
    }

    fn solve_scaled_normal(
        &self,
        d: &DVector<f64>,
        c: &DVector<f64>,
        rhs: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        self.normal.solve_scaled(d, c, rhs)
    }
}

/// `JᵀJ` in block form: a pentadiagonal band of expression blocks (the
/// inter-frame coupling is a multiple of the identity), an identity border,
/// and the identity corner block.
#[derive(Debug, Clone)]
struct BlockNormal {
    num_id: usize,
    num_exp: usize,
    diag: Vec<DMatrix<f64>>,
    /// Coefficient of `I` coupling frames `t` and `t+1`.
    band1: Vec<f64>,
    /// Coefficient of `I` coupling frames `t` and `t+2`.
    band2: Vec<f64>,
    /// `n_i × n_e` coupling of identity and frame `t`.
    border: Vec<DMatrix<f64>>,
    corner: DMatrix<f64>,
}

impl BlockNormal {
    fn build(
        num_id: usize,
        num_exp: usize,
        blocks: &[FrameBlock],
        prior: &DVector<f64>,
        smooth: f64,
    ) -> Self {
        let frames = blocks.len();
        let products: Vec<DMatrix<f64>> = blocks
            .par_iter()
            .map(|b| b.jacobian.tr_mul(&b.jacobian))
            .collect();
        let mut corner = DMatrix::zeros(num_id, num_id);
        let mut diag = Vec::with_capacity(frames);
        let mut border = Vec::with_capacity(frames);
        for p in &products {
            corner += p.view((0, 0), (num_id, num_id));
            border.push(p.view((0, num_id), (num_id, num_exp)).into_owned());
            diag.push(p.view((num_id, num_id), (num_exp, num_exp)).into_owned());
        }
        for k in 0..num_id {
            corner[(k, k)] += prior[k] * prior[k];
        }
        for (t, block) in diag.iter_mut().enumerate() {
            for k in 0..num_exp {
                let w = prior[num_id + t * num_exp + k];
                block[(k, k)] += w * w;
            }
        }
        let s2 = smooth * smooth;
        let mut band1 = vec![0.0; frames.saturating_sub(1)];
        let mut band2 = vec![0.0; frames.saturating_sub(2)];
        let mut diag_extra = vec![0.0; frames];
        // Each interior frame t contributes [1, -2, 1]ᵀ[1, -2, 1] on frames t-1, t, t+1.
        for t in 1..frames.saturating_sub(1) {
            diag_extra[t - 1] += s2;
            diag_extra[t] += 4.0 * s2;
            diag_extra[t + 1] += s2;
            band1[t - 1] -= 2.0 * s2;
            band1[t] -= 2.0 * s2;
            band2[t - 1] += s2;
        }
        for (block, extra) in diag.iter_mut().zip(diag_extra) {
            for k in 0..num_exp {
                block[(k, k)] += extra;
            }
        }
        BlockNormal {
            num_id,
            num_exp,
            diag,
            band1,
            band2,
            border,
            corner,
        }
    }

    /// Solves `(D N D + diag(c)) x = rhs` by a block Cholesky factorization
    /// that eliminates the expression band first and the identity block last.
    fn solve_scaled(
        &self,
        d: &DVector<f64>,
        c: &DVector<f64>,
        rhs: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let ni = self.num_id;
        let ne = self.num_exp;
        let frames = self.diag.len();
        let d_id = d.rows(0, ni);
        let d_t = |t: usize| d.rows(ni + t * ne, ne);
        let c_t = |t: usize| c.rows(ni + t * ne, ne);
        let not_pd = || Error::Numerical("block normal matrix is not positive definite".into());

        // Scaled lower blocks A(t, t-1) and A(t, t-2) are diagonal.
        let scaled_band = |coef: f64, a: usize, b: usize| -> DMatrix<f64> {
            DMatrix::from_diagonal(&DVector::from_fn(ne, |k, _| coef * d_t(a)[k] * d_t(b)[k]))
        };

        let mut l_diag: Vec<DMatrix<f64>> = Vec::with_capacity(frames);
        let mut l_sub1: Vec<DMatrix<f64>> = Vec::with_capacity(frames);
        let mut l_sub2: Vec<DMatrix<f64>> = Vec::with_capacity(frames);
        let mut w: Vec<DMatrix<f64>> = Vec::with_capacity(frames);

        for t in 0..frames {
            let dt = d_t(t);
            let mut a_tt = DMatrix::from_fn(ne, ne, |i, j| dt[i] * self.diag[t][(i, j)] * dt[j]);
            for k in 0..ne {
                a_tt[(k, k)] += c_t(t)[k];
            }
            let mut border_t =
                DMatrix::from_fn(ni, ne, |i, j| d_id[i] * self.border[t][(i, j)] * dt[j]);

            let sub2 = if t >= 2 {
                // L(t,t-2) L(t-2,t-2)ᵀ = A(t,t-2)
                let a = scaled_band(self.band2[t - 2], t, t - 2);
                Some(right_solve_lower_t(&l_diag[t - 2], &a).ok_or_else(not_pd)?)
            } else {
                None
            };
            let sub1 = if t >= 1 {
                let mut a = scaled_band(self.band1[t - 1], t, t - 1);
                if let Some(s2) = &sub2 {
                    a -= s2 * l_sub1[t - 1].transpose();
                }
                Some(right_solve_lower_t(&l_diag[t - 1], &a).ok_or_else(not_pd)?)
            } else {
                None
            };
            if let Some(s1) = &sub1 {
                a_tt -= s1 * s1.transpose();
                border_t -= &w[t - 1] * s1.transpose();
            }
            if let Some(s2) = &sub2 {
                a_tt -= s2 * s2.transpose();
                border_t -= &w[t - 2] * s2.transpose();
            }
            let l_tt = a_tt.cholesky().ok_or_else(not_pd)?.l();
            let w_t = right_solve_lower_t(&l_tt, &border_t).ok_or_else(not_pd)?;
            l_diag.push(l_tt);
            l_sub1.push(sub1.unwrap_or_else(|| DMatrix::zeros(ne, ne)));
            l_sub2.push(sub2.unwrap_or_else(|| DMatrix::zeros(ne, ne)));
            w.push(w_t);
        }

        let mut corner = DMatrix::from_fn(ni, ni, |i, j| d_id[i] * self.corner[(i, j)] * d_id[j]);
        for k in 0..ni {
            corner[(k, k)] += c[k];
        }
        for w_t in &w {
            corner -= w_t * w_t.transpose();
        }
        let l_corner = corner.cholesky().ok_or_else(not_pd)?.l();

        // Forward substitution.
        let mut y: Vec<DVector<f64>> = Vec::with_capacity(frames);
        for t in 0..frames {
            let mut b = rhs.rows(ni + t * ne, ne).into_owned();
            if t >= 1 {
                b -= &l_sub1[t] * &y[t - 1];
            }
            if t >= 2 {
                b -= &l_sub2[t] * &y[t - 2];
            }
            let yt = l_diag[t].solve_lower_triangular(&b).ok_or_else(not_pd)?;
            y.push(yt);
        }
        let mut b_id = rhs.rows(0, ni).into_owned();
        for (w_t, y_t) in w.iter().zip(&y) {
            b_id -= w_t * y_t;
        }
        let y_id = l_corner.solve_lower_triangular(&b_id).ok_or_else(not_pd)?;

        // Back substitution.
        let x_id = l_corner
            .tr_solve_lower_triangular(&y_id)
            .ok_or_else(not_pd)?;
        let mut x: Vec<DVector<f64>> = vec![DVector::zeros(ne); frames];
        for t in (0..frames).rev() {
            let mut b = y[t].clone() - w[t].tr_mul(&x_id);
            if t + 1 < frames {
                b -= l_sub1[t + 1].tr_mul(&x[t + 1]);
            }
            if t + 2 < frames {
                b -= l_sub2[t + 2].tr_mul(&x[t + 2]);
            }
            x[t] = l_diag[t].tr_solve_lower_triangular(&b).ok_or_else(not_pd)?;
        }

        let mut out = DVector::zeros(ni + frames * ne);
        out.rows_mut(0, ni).copy_from(&x_id);
        for (t, xt) in x.iter().enumerate() {
            out.rows_mut(ni + t * ne, ne).copy_from(xt);
        }
        Ok(out)
    }
}

/// Solves `X Lᵀ = A` for `X`, with `L` lower triangular.
fn right_solve_lower_t(l: &DMatrix<f64>, a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    // L Xᵀ = Aᵀ
    l.solve_lower_triangular(&a.transpose())
        .map(|xt| xt.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fitting::LandmarkFrame;
    use nalgebra::{UnitQuaternion, Vector2};

    /// One vertex, one landmark, one identity and one expression component.
    fn tiny_model() -> MorphableModel {
        MorphableModel {
            mean_shape: DVector::from_vec(vec![1.0, 2.0, 3.0]),
            id_basis: DMatrix::from_vec(3, 1, vec![0.5, -1.0, 2.0]),
            exp_basis: DMatrix::from_vec(3, 1, vec![1.5, 0.25, -0.5]),
            id_sigma: DVector::from_element(1, 2.0),
            exp_sigma: DVector::from_element(1, 4.0),
            triangles: vec![],
            landmark_indices: vec![0],
            left_eye_region: vec![],
            right_eye_region: vec![],
        }
    }

    #[test]
    fn minimal_case_matches_hand_derivation() {
        let model = tiny_model();
        let frames: Vec<LandmarkFrame> = (0..3)
            .map(|t| LandmarkFrame::new(vec![Vector2::new(t as f64, -1.0)], None).unwrap())
            .collect();
        let seq = LandmarkSequence::new(frames).unwrap();
        // Scale 2, identity rotation, translation (10, 20): p = (2x + 10, -2y + 20).
        let cam =
            CameraParams::new(UnitQuaternion::identity(), Vector2::new(10.0, 20.0), 2.0).unwrap();
        let cfg = FitConfig {
            landmark_weight: Some(4.0),
            prior_weight: 9.0,
            smoothness_weight: 16.0,
            ..FitConfig::default()
        };
        let sys = assemble_linear_system(&model, &seq, &[cam; 3], &cfg).unwrap();
        assert_eq!(sys.num_rows(), 2 * 3 + (1 + 3) + 1);
        let jac = sys.jacobian_dense();
        let r0 = sys.residual_offset();

        // √w_l = 2; d(px)/d(s_id) = 2·0.5, d(py)/d(s_id) = −2·(−1); same for expression.
        for t in 0..3 {
            assert_eq!(jac[(2 * t, 0)], 2.0 * 1.0);
            assert_eq!(jac[(2 * t + 1, 0)], 2.0 * 2.0);
            assert_eq!(jac[(2 * t, 1 + t)], 2.0 * 3.0);
            assert_eq!(jac[(2 * t + 1, 1 + t)], 2.0 * -0.5);
            // Mean projects to (12, 16).
            assert_eq!(r0[2 * t], 2.0 * (12.0 - t as f64));
            assert_eq!(r0[2 * t + 1], 2.0 * (16.0 + 1.0));
        }
        // Prior rows: √9 / σ.
        assert_eq!(jac[(6, 0)], 3.0 / 2.0);
        for t in 0..3 {
            assert_eq!(jac[(7 + t, 1 + t)], 3.0 / 4.0);
        }
        // Smoothness row: √16 · [1, −2, 1].
        assert_eq!(
            jac.row(10).iter().copied().collect::<Vec<_>>(),
            vec![0.0, 4.0, -8.0, 4.0]
        );
        assert_eq!(sys.row_group(5), RowGroup::Landmark);
        assert_eq!(sys.row_group(6), RowGroup::Prior);
        assert_eq!(sys.row_group(10), RowGroup::Smoothness);
    }

    #[test]
    fn prior_only_jacobian_is_inverse_sigma_diagonal() {
        let model = tiny_model();
        let frames: Vec<LandmarkFrame> = (0..4)
            .map(|_| LandmarkFrame::new(vec![Vector2::new(0.0, 0.0)], None).unwrap())
            .collect();
        let seq = LandmarkSequence::new(frames).unwrap();
        let cfg = FitConfig {
            landmark_weight: Some(0.0),
            prior_weight: 1.0,
            smoothness_weight: 0.0,
            ..FitConfig::default()
        };
        let cams = vec![CameraParams::identity(); 4];
        let sys = assemble_linear_system(&model, &seq, &cams, &cfg).unwrap();
        let jac = sys.jacobian_dense();
        let lm = sys.num_landmark_rows();
        assert!(jac.rows(0, lm).iter().all(|v| *v == 0.0));
        assert!(jac
            .rows(lm + 5, sys.num_smoothness_rows())
            .iter()
            .all(|v| *v == 0.0));
        let prior = jac.rows(lm, 5);
        for i in 0..5 {
            for j in 0..5 {
                let expected = if i != j {
                    0.0
                } else if i == 0 {
                    0.5
                } else {
                    0.25
                };
                assert_eq!(prior[(i, j)], expected);
            }
        }
    }

    #[test]
    fn block_solve_matches_dense_normal_equations() {
        let model = crate::synthetic::SyntheticModelSpec::new(120, 3, 4)
            .seed(2)
            .build()
            .unwrap();
        let video = crate::synthetic::SyntheticVideoSpec::new(6)
            .seed(3)
            .generate(&model)
            .unwrap();
        let cfg = FitConfig {
            smoothness_weight: 0.7,
            ..FitConfig::default()
        };
        let sys =
            assemble_linear_system(&model, &video.landmarks, &video.truth.cameras, &cfg).unwrap();
        let n = sys.num_vars();
        let jac = sys.jacobian_dense();
        let d = DVector::from_fn(n, |i, _| 0.3 + (i as f64 * 0.37).sin().abs());
        let c = DVector::from_fn(n, |i, _| if i % 3 == 0 { 0.1 * i as f64 } else { 0.0 });
        let rhs = DVector::from_fn(n, |i, _| (i as f64).cos());
        let scaled = &jac * DMatrix::from_diagonal(&d);
        let mut dense = scaled.tr_mul(&scaled);
        for i in 0..n {
            dense[(i, i)] += c[i];
        }
        let expected = dense.clone().cholesky().unwrap().solve(&rhs);
        let got = sys.solve_scaled_normal(&d, &c, &rhs).unwrap();
        let err = (&got - &expected).amax() / expected.amax();
        assert!(err < 1e-9, "relative error {err}");
        let residual = (&dense * &got - &rhs).amax();
        assert!(
            residual < 1e-8 * rhs.amax() * dense.amax().max(1.0),
            "residual {residual}"
        );
    }

    #[test]
    fn transpose_is_adjoint() {
        let model = crate::synthetic::SyntheticModelSpec::new(120, 2, 3)
            .seed(4)
            .build()
            .unwrap();
        let video = crate::synthetic::SyntheticVideoSpec::new(5)
            .seed(5)
            .generate(&model)
            .unwrap();
        let sys = assemble_linear_system(
            &model,
            &video.landmarks,
            &video.truth.cameras,
            &FitConfig::default(),
        )
        .unwrap();
        let x = DVector::from_fn(sys.num_vars(), |i, _| (i as f64 * 0.7).sin());
        let r = DVector::from_fn(sys.num_rows(), |i, _| (i as f64 * 0.3).cos());
        let lhs = sys.apply_jacobian(&x).dot(&r);
        let rhs = x.dot(&sys.apply_jacobian_transpose(&r));
        assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));
    }
}
