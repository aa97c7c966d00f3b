//! Reference implementations used to check the library: slow, direct, and
//! written without touching the code paths they check.
#![allow(dead_code)]

use h2h_core::fitting::LandmarkSequence;
use h2h_core::{CameraParams, FitConfig, MorphableModel};
use nalgebra::{DMatrix, DVector, Vector2};

/// Residual vector of the video energy for fixed cameras, built row by row
/// from the model arrays and the SOP formula.
pub fn residuals_direct(
    model: &MorphableModel,
    landmarks: &LandmarkSequence,
    cameras: &[CameraParams],
    cfg: &FitConfig,
    theta: &DVector<f64>,
) -> DVector<f64> {
    let ni = model.num_id();
    let ne = model.num_exp();
    let frames = landmarks.frames.len();
    let k = model.landmark_indices.len();
    let w_l = cfg.landmark_weight.unwrap_or(1.0 / (k * frames) as f64);
    let exp_at = |t: usize, c: usize| theta[ni + t * ne + c];
    let mut out = Vec::new();
    for (t, frame) in landmarks.frames.iter().enumerate() {
        let cam = &cameras[t];
        let r = cam.rotation.to_rotation_matrix();
        for (j, &vi) in model.landmark_indices.iter().enumerate() {
            let mut v = [0.0; 3];
            for a in 0..3 {
                let row = 3 * vi as usize + a;
                let mut x = model.mean_shape[row];
                for c in 0..ni {
                    x += model.id_basis[(row, c)] * theta[c];
                }
                for c in 0..ne {
                    x += model.exp_basis[(row, c)] * exp_at(t, c);
                }
                v[a] = x;
            }
            let rx = r[(0, 0)] * v[0] + r[(0, 1)] * v[1] + r[(0, 2)] * v[2];
            let ry = r[(1, 0)] * v[0] + r[(1, 1)] * v[1] + r[(1, 2)] * v[2];
            let px = cam.scale * rx + cam.translation.x;
            let py = -cam.scale * ry + cam.translation.y;
            let w = (w_l * frame.confidence[j]).sqrt();
            out.push(w * (px - frame.points[j].x));
            out.push(w * (py - frame.points[j].y));
        }
    }
    let p = cfg.prior_weight.sqrt();
    for c in 0..ni {
        out.push(p * theta[c] / model.id_sigma[c]);
    }
    for t in 0..frames {
        for c in 0..ne {
            out.push(p * exp_at(t, c) / model.exp_sigma[c]);
        }
    }
    let s = cfg.smoothness_weight.sqrt();
    for t in 1..frames.saturating_sub(1) {
        for c in 0..ne {
            out.push(s * (exp_at(t + 1, c) - 2.0 * exp_at(t, c) + exp_at(t - 1, c)));
        }
    }
    DVector::from_vec(out)
}

/// Central-difference Jacobian of `f` at `x`.
pub fn central_difference(
    f: impl Fn(&DVector<f64>) -> DVector<f64>,
    x: &DVector<f64>,
    step: f64,
) -> DMatrix<f64> {
    let m = f(x).len();
    let mut jac = DMatrix::zeros(m, x.len());
    for k in 0..x.len() {
        let h = step * (1.0 + x[k].abs());
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[k] += h;
        xm[k] -= h;
        let col = (f(&xp) - f(&xm)) / (2.0 * h);
        jac.set_column(k, &col);
    }
    jac
}

/// Largest column-wise relative difference `‖a_k − b_k‖∞ / ‖b_k‖∞`; columns
/// that are zero in `b` contribute their absolute difference.
pub fn max_column_relative_error(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (0..a.ncols())
        .map(|k| {
            let diff = (a.column(k) - b.column(k)).amax();
            let scale = b.column(k).amax();
            if scale > 0.0 {
                diff / scale
            } else {
                diff
            }
        })
        .fold(0.0, f64::max)
}

/// Minimizer of `½‖A x + r0‖²` over a box, by trying every assignment of the
/// finitely bounded variables to {free, lower, upper} and keeping the best
/// feasible stationary point. Exponential in the number of finite bounds.
pub fn enumerate_box_lsq(
    a: &DMatrix<f64>,
    r0: &DVector<f64>,
    lb: &[f64],
    ub: &[f64],
) -> DVector<f64> {
    let n = a.ncols();
    let bounded: Vec<usize> = (0..n)
        .filter(|&i| lb[i].is_finite() || ub[i].is_finite())
        .collect();
    let combos = 3usize.pow(bounded.len() as u32);
    let mut best: Option<(f64, DVector<f64>)> = None;
    for code in 0..combos {
        let mut state = vec![0u8; n];
        let mut c = code;
        let mut skip = false;
        for &i in &bounded {
            state[i] = (c % 3) as u8;
            c /= 3;
            if (state[i] == 1 && !lb[i].is_finite()) || (state[i] == 2 && !ub[i].is_finite()) {
                skip = true;
            }
        }
        if skip {
            continue;
        }
        let mut x = DVector::zeros(n);
        for i in 0..n {
            match state[i] {
                1 => x[i] = lb[i],
                2 => x[i] = ub[i],
                _ => {}
            }
        }
        let free: Vec<usize> = (0..n).filter(|&i| state[i] == 0).collect();
        if !free.is_empty() {
            let af = DMatrix::from_fn(a.nrows(), free.len(), |r, c| a[(r, free[c])]);
            let rhs = -(r0 + a * &x);
            let svd = af.svd(true, true);
            if svd.singular_values.min() <= 1e-12 * svd.singular_values.max() {
                continue;
            }
            let sol = svd.solve(&rhs, 0.0).expect("u and v were computed");
            let mut ok = true;
            for (c, &i) in free.iter().enumerate() {
                if sol[c] < lb[i] || sol[c] > ub[i] {
                    ok = false;
                }
                x[i] = sol[c];
            }
            if !ok {
                continue;
            }
        }
        let cost = 0.5 * (a * &x + r0).norm_squared();
        if best.as_ref().is_none_or(|(b, _)| cost < *b) {
            best = Some((cost, x));
        }
    }
    best.expect("the all-bounded assignment is always feasible")
        .1
}

/// Triangle id per pixel, computed pixel by pixel over every triangle.
/// Coverage is the top-left rule on edge functions taken in lexicographic
/// endpoint order; the greatest barycentric depth wins, ties to the lower id.
pub fn rasterize_brute_force(
    points: &[Vector2<f64>],
    depth: &[f64],
    triangles: &[[u32; 3]],
    width: u32,
    height: u32,
) -> Vec<u32> {
    fn edge(a: Vector2<f64>, b: Vector2<f64>, p: Vector2<f64>) -> f64 {
        if (a.x, a.y) <= (b.x, b.y) {
            (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x)
        } else {
            -((a.x - b.x) * (p.y - b.y) - (a.y - b.y) * (p.x - b.x))
        }
    }
    fn top_left(a: Vector2<f64>, b: Vector2<f64>) -> bool {
        b.y < a.y || (b.y == a.y && b.x > a.x)
    }
    let mut ids = vec![u32::MAX; (width * height) as usize];
    for py in 0..height {
        for px in 0..width {
            let p = Vector2::new(px as f64 + 0.5, py as f64 + 0.5);
            let mut best: Option<(f64, u32)> = None;
            for (m, tri) in triangles.iter().enumerate() {
                let [ia, ib, ic] = tri.map(|i| i as usize);
                let a = points[ia];
                let (mut b, mut c) = (points[ib], points[ic]);
                let (za, mut zb, mut zc) = (depth[ia], depth[ib], depth[ic]);
                let area = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
                if area == 0.0 {
                    continue;
                }
                if area < 0.0 {
                    std::mem::swap(&mut b, &mut c);
                    std::mem::swap(&mut zb, &mut zc);
                }
                let w = [edge(b, c, p), edge(c, a, p), edge(a, b, p)];
                let tl = [top_left(b, c), top_left(c, a), top_left(a, b)];
                let inside = w
                    .iter()
                    .zip(tl)
                    .all(|(&wi, t)| wi > 0.0 || (wi == 0.0 && t));
                if !inside {
                    continue;
                }
                let z = (w[0] * za + w[1] * zb + w[2] * zc) / (w[0] + w[1] + w[2]);
                if best.is_none_or(|(bz, _)| z > bz) {
                    best = Some((z, m as u32));
                }
            }
            if let Some((_, m)) = best {
                ids[(py * width + px) as usize] = m;
            }
        }
    }
    ids
}
