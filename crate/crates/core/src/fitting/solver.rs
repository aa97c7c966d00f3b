//! Box-constrained linear least squares by an interior reflective Newton
//! method (Coleman–Li affine scaling).
//!
//! Minimizes `‖J θ + r₀‖²` subject to `lower ≤ θ ≤ upper`. Each iteration
//! solves the scaled Newton system `(D JᵀJ D + diag(g ∘ dv)) p̂ = −D g` through
//! [`LinearLeastSquares::solve_scaled_normal`], so structured problems can use
//! a direct factorization of their own sparsity pattern. The step is the best
//! of the truncated Newton step, its reflection off the first bound it hits,
//! and a scaled steepest-descent step. Once the iterates settle, the active
//! set is read off and the reduced problem is solved exactly.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A linear least-squares problem with box constraints.
pub trait LinearLeastSquares {
    fn num_vars(&self) -> usize;
    fn lower(&self) -> &DVector<f64>;
    fn upper(&self) -> &DVector<f64>;
    /// `J θ + r₀`.
    fn residuals(&self, theta: &DVector<f64>) -> DVector<f64>;
    /// `J x`.
    fn apply_jacobian(&self, x: &DVector<f64>) -> DVector<f64>;
    /// `Jᵀ r`.
    fn apply_jacobian_transpose(&self, r: &DVector<f64>) -> DVector<f64>;
    /// Solves `(diag(d) JᵀJ diag(d) + diag(c)) x = rhs`.
    fn solve_scaled_normal(
        &self,
        d: &DVector<f64>,
        c: &DVector<f64>,
        rhs: &DVector<f64>,
    ) -> Result<DVector<f64>>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub max_iterations: usize,
    /// Relative first-order tolerance, measured against the initial gradient.
    pub grad_tolerance: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iterations: 200,
            grad_tolerance: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub theta: DVector<f64>,
    /// Accepted steps, including a final active-set polish if it was taken.
    pub iterations: usize,
    pub converged: bool,
    /// `‖r‖²` at the start point and after each accepted step.
    pub objective_history: Vec<f64>,
}

impl SolveResult {
    pub fn objective(&self) -> f64 {
        *self
            .objective_history
            .last()
            .expect("history starts with the initial objective")
    }
}

/// Dense reference implementation of [`LinearLeastSquares`].
#[derive(Debug, Clone)]
pub struct DenseLeastSquares {
    pub jacobian: DMatrix<f64>,
    pub offset: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl LinearLeastSquares for DenseLeastSquares {
    fn num_vars(&self) -> usize {
        self.jacobian.ncols()
    }

    fn lower(&self) -> &DVector<f64> {
        &self.lower
    }

    fn upper(&self) -> &DVector<f64> {
        &self.upper
    }

    fn residuals(&self, theta: &DVector<f64>) -> DVector<f64> {
        &self.jacobian * theta + &self.offset
    }

    fn apply_jacobian(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.jacobian * x
    }

    fn apply_jacobian_transpose(&self, r: &DVector<f64>) -> DVector<f64> {
        self.jacobian.tr_mul(r)
    }

    fn solve_scaled_normal(
        &self,
        d: &DVector<f64>,
        c: &DVector<f64>,
        rhs: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let scaled = &self.jacobian * DMatrix::from_diagonal(d);
        let mut normal = scaled.tr_mul(&scaled);
        for i in 0..c.len() {
            normal[(i, i)] += c[i];
        }
        normal
            .cholesky()
            .map(|ch| ch.solve(rhs))
            .ok_or_else(|| Error::Numerical("scaled normal matrix is not positive definite".into()))
    }
}

/// Minimizes `‖J θ + r₀‖²` over the box, starting from `theta0`.
///
/// Hitting the iteration cap is not an error: the best iterate is returned
/// with `converged == false`.
pub fn solve_box_lsq<P: LinearLeastSquares + ?Sized>(
    problem: &P,
    theta0: &DVector<f64>,
    options: &SolverOptions,
) -> Result<SolveResult> {
    let n = problem.num_vars();
    let lb = problem.lower();
    let ub = problem.upper();
    Error::check_len("start vector", n, theta0.len())?;
    Error::check_len("lower bounds", n, lb.len())?;
    Error::check_len("upper bounds", n, ub.len())?;
    for i in 0..n {
        if !(lb[i] < ub[i]) || lb[i].is_nan() || ub[i].is_nan() {
            return Err(Error::validation(
                "bounds",
                format!("coordinate {i} has empty interval [{}, {}]", lb[i], ub[i]),
            ));
        }
    }

    let mut theta = strictly_feasible(theta0, lb, ub, 1e-10);
    let mut residual = problem.residuals(&theta);
    let mut cost = residual.norm_squared();
    let mut history = vec![cost];
    let mut g = problem.apply_jacobian_transpose(&residual);
    // Warm starts begin with a tiny gradient; measure against the origin too.
    let origin = clamp(&DVector::zeros(n), lb, ub);
    let g_origin = problem.apply_jacobian_transpose(&problem.residuals(&origin));
    let gtol = options.grad_tolerance * g.amax().max(g_origin.amax());

    let mut iterations = 0;
    let mut converged = first_order_satisfied(&theta, &g, lb, ub, gtol);
    if options.max_iterations == 0 || converged {
        return Ok(SolveResult {
            theta: clamp(&theta, lb, ub),
            iterations,
            converged,
            objective_history: history,
        });
    }

    let initial_scaled = scaled_gradient_norm(&theta, &g, lb, ub);
    while iterations < options.max_iterations {
        let (v, dv) = coleman_li_scaling(&theta, &g, lb, ub);
        let scaled_norm = v.component_mul(&g).amax();
        if scaled_norm <= options.grad_tolerance * initial_scaled || scaled_norm == 0.0 {
            break;
        }
        let d = v.map(f64::sqrt);
        let diag_h = g.component_mul(&dv);
        let g_h = d.component_mul(&g);

        let p_h = match problem.solve_scaled_normal(&d, &diag_h, &(-&g_h)) {
            Ok(p) => p,
            Err(_) => {
                let ridge = 1e-12 * (1.0 + diag_h.amax());
                let shifted = diag_h.map(|c| c + ridge);
                problem.solve_scaled_normal(&d, &shifted, &(-&g_h))?
            }
        };
        if !p_h.iter().all(|x| x.is_finite()) {
            return Err(Error::Numerical("non-finite Newton step".into()));
        }
        let p = d.component_mul(&p_h);
        if p.dot(&g) > 0.0 {
            break;
        }
        let step_fraction = 1.0 - scaled_norm.min(0.005);
        let model = ScaledModel {
            problem,
            g_h: &g_h,
            diag_h: &diag_h,
            d: &d,
        };
        let step = select_step(&model, &theta, &p, &p_h, lb, ub, step_fraction);

        let candidate = strictly_feasible_after_step(&(&theta + &step), lb, ub);
        let new_residual = problem.residuals(&candidate);
        let new_cost = new_residual.norm_squared();
        if !(new_cost <= cost) {
            break;
        }
        let decrease = cost - new_cost;
        theta = candidate;
        residual = new_residual;
        g = problem.apply_jacobian_transpose(&residual);
        iterations += 1;
        history.push(new_cost);
        cost = new_cost;
        if decrease <= 1e-15 * cost || cost == 0.0 {
            break;
        }
    }

    if let Some((polished, polished_residual)) = polish_active_set(problem, &theta, &g, lb, ub) {
        let polished_cost = polished_residual.norm_squared();
        if polished_cost <= cost {
            theta = polished;
            g = problem.apply_jacobian_transpose(&polished_residual);
            iterations += 1;
            history.push(polished_cost);
        }
    }

    let theta = clamp(&theta, lb, ub);
    converged = first_order_satisfied(&theta, &g, lb, ub, gtol);
    Ok(SolveResult {
        theta,
        iterations,
        converged,
        objective_history: history,
    })
}

/// Quadratic model in the scaled variables:
/// `q(x̂) = ĝᵀx̂ + ½‖J D x̂‖² + ½ Σ cᵢ x̂ᵢ²`.
struct ScaledModel<'a, P: ?Sized> {
    problem: &'a P,
    g_h: &'a DVector<f64>,
    diag_h: &'a DVector<f64>,
    d: &'a DVector<f64>,
}

impl<P: LinearLeastSquares + ?Sized> ScaledModel<'_, P> {
    fn jac_hat(&self, x_h: &DVector<f64>) -> DVector<f64> {
        self.problem.apply_jacobian(&self.d.component_mul(x_h))
    }

    fn value(&self, x_h: &DVector<f64>) -> f64 {
        let jx = self.jac_hat(x_h);
        let curvature: f64 = x_h
            .iter()
            .zip(self.diag_h.iter())
            .map(|(x, c)| c * x * x)
            .sum();
        self.g_h.dot(x_h) + 0.5 * (jx.norm_squared() + curvature)
    }

    /// Minimizes the model along `s0 + t·s` for `t ∈ [lo, hi]`.
    fn minimize_along(&self, s0: &DVector<f64>, s: &DVector<f64>, lo: f64, hi: f64) -> (f64, f64) {
        let js = self.jac_hat(s);
        let js0 = self.jac_hat(s0);
        let mut a = js.norm_squared();
        let mut b = self.g_h.dot(s) + js0.dot(&js);
        for i in 0..s.len() {
            a += self.diag_h[i] * s[i] * s[i];
            b += self.diag_h[i] * s0[i] * s[i];
        }
        let a = 0.5 * a;
        let base = self.value(s0);
        let eval = |t: f64| base + t * (b + a * t);
        let mut best = (lo, eval(lo));
        let candidates = [hi, if a > 0.0 { -b / (2.0 * a) } else { lo }];
        for t in candidates {
            if t >= lo && t <= hi {
                let v = eval(t);
                if v < best.1 {
                    best = (t, v);
                }
            }
        }
        best
    }
}

fn select_step<P: LinearLeastSquares + ?Sized>(
    model: &ScaledModel<'_, P>,
    x: &DVector<f64>,
    p: &DVector<f64>,
    p_h: &DVector<f64>,
    lb: &DVector<f64>,
    ub: &DVector<f64>,
    theta: f64,
) -> DVector<f64> {
    let full = x + p;
    if in_bounds(&full, lb, ub) {
        return p.clone();
    }
    let (p_stride, hits) = step_to_bound(x, p, lb, ub);

    // Reflect the Newton direction off the bounds it hits first.
    let mut r_h = p_h.clone();
    for (i, hit) in hits.iter().enumerate() {
        if *hit {
            r_h[i] = -r_h[i];
        }
    }
    let r = model.d.component_mul(&r_h);
    let p_h_bound = p_h * p_stride;
    let x_on_bound = x + p * p_stride;
    let (r_stride_max, _) = step_to_bound(&x_on_bound, &r, lb, ub);
    let r_lo = (1.0 - theta) * r_stride_max;
    let r_hi = theta * r_stride_max;
    let (reflected, reflected_value) = if r_hi > 0.0 && r_stride_max.is_finite() {
        let (t, value) = model.minimize_along(&p_h_bound, &r_h, r_lo, r_hi);
        (Some(model.d.component_mul(&(&p_h_bound + &r_h * t))), value)
    } else {
        (None, f64::INFINITY)
    };

    // Newton step pulled back strictly inside.
    let p_h_inside = &p_h_bound * theta;
    let newton_value = model.value(&p_h_inside);
    let newton = model.d.component_mul(&p_h_inside);

    // Scaled steepest descent.
    let ag_h = -model.g_h;
    let ag = model.d.component_mul(&ag_h);
    let (ag_max, _) = step_to_bound(x, &ag, lb, ub);
    let zero = DVector::zeros(x.len());
    let (ag_t, ag_value) = model.minimize_along(&zero, &ag_h, 0.0, theta * ag_max.min(1e300));
    let descent = ag * ag_t;

    if newton_value <= reflected_value && newton_value <= ag_value {
        newton
    } else if reflected_value <= ag_value {
        reflected.expect("finite reflected value implies a reflected step")
    } else {
        descent
    }
}

/// Affine-scaling vector `v` and its derivative sign `dv`.
fn coleman_li_scaling(
    x: &DVector<f64>,
    g: &DVector<f64>,
    lb: &DVector<f64>,
    ub: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let n = x.len();
    let mut v = DVector::from_element(n, 1.0);
    let mut dv = DVector::zeros(n);
    for i in 0..n {
        if g[i] < 0.0 && ub[i].is_finite() {
            v[i] = ub[i] - x[i];
            dv[i] = -1.0;
        } else if g[i] > 0.0 && lb[i].is_finite() {
            v[i] = x[i] - lb[i];
            dv[i] = 1.0;
        }
    }
    (v, dv)
}

fn scaled_gradient_norm(
    x: &DVector<f64>,
    g: &DVector<f64>,
    lb: &DVector<f64>,
    ub: &DVector<f64>,
) -> f64 {
    let (v, _) = coleman_li_scaling(x, g, lb, ub);
    v.component_mul(g).amax()
}

/// Largest `t` keeping `x + t·s` in the box, and which coordinates reach a
/// bound at that `t`.
fn step_to_bound(
    x: &DVector<f64>,
    s: &DVector<f64>,
    lb: &DVector<f64>,
    ub: &DVector<f64>,
) -> (f64, Vec<bool>) {
    let steps: Vec<f64> = (0..x.len())
        .map(|i| {
            if s[i] > 0.0 {
                (ub[i] - x[i]) / s[i]
            } else if s[i] < 0.0 {
                (lb[i] - x[i]) / s[i]
            } else {
                f64::INFINITY
            }
        })
        .map(|t| t.max(0.0))
        .collect();
    let min = steps.iter().copied().fold(f64::INFINITY, f64::min);
    let hits = steps.iter().map(|&t| t == min && min.is_finite()).collect();
    (min, hits)
}

fn in_bounds(x: &DVector<f64>, lb: &DVector<f64>, ub: &DVector<f64>) -> bool {
    (0..x.len()).all(|i| x[i] >= lb[i] && x[i] <= ub[i])
}

fn clamp(x: &DVector<f64>, lb: &DVector<f64>, ub: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(x.len(), |i, _| x[i].clamp(lb[i], ub[i]))
}

/// Moves `x` inside the open box, keeping at least a relative margin `rstep`
/// from each bound.
fn strictly_feasible(
    x: &DVector<f64>,
    lb: &DVector<f64>,
    ub: &DVector<f64>,
    rstep: f64,
) -> DVector<f64> {
    DVector::from_fn(x.len(), |i, _| {
        let (l, u) = (lb[i], ub[i]);
        let mut xi = x[i].clamp(l, u);
        if l.is_finite() && xi <= l {
            xi = l + rstep * l.abs().max(1.0);
        } else if u.is_finite() && xi >= u {
            xi = u - rstep * u.abs().max(1.0);
        }
        if !(xi > l && xi < u) {
            xi = 0.5 * (l + u);
        }
        xi
    })
}

fn strictly_feasible_after_step(
    x: &DVector<f64>,
    lb: &DVector<f64>,
    ub: &DVector<f64>,
) -> DVector<f64> {
    DVector::from_fn(x.len(), |i, _| {
        let (l, u) = (lb[i], ub[i]);
        let xi = x[i];
        if xi <= l {
            l.next_up().min(0.5 * (l + u))
        } else if xi >= u {
            u.next_down().max(0.5 * (l + u))
        } else {
            xi
        }
    })
}

/// Distance from a bound within which an interior iterate is treated as
/// sitting on it when guessing the active set.
fn near_bound_tolerance(lower: f64, upper: f64) -> f64 {
    let magnitude = [lower, upper]
        .iter()
        .filter(|b| b.is_finite())
        .fold(1.0f64, |m, b| m.max(b.abs()));
    (1e-6 * magnitude).min(0.25 * (upper - lower))
}

/// First-order conditions: free coordinates have (relatively) vanishing
/// gradient, coordinates on a bound have the gradient pointing outward.
fn first_order_satisfied(
    x: &DVector<f64>,
    g: &DVector<f64>,
    lb: &DVector<f64>,
    ub: &DVector<f64>,
    gtol: f64,
) -> bool {
    let tol = gtol.max(f64::MIN_POSITIVE);
    (0..x.len()).all(|i| {
        if x[i] <= lb[i] {
            g[i] >= -tol
        } else if x[i] >= ub[i] {
            g[i] <= tol
        } else {
            g[i].abs() <= tol
        }
    })
}

/// Fixes the coordinates that look active and solves the reduced problem
/// exactly. Returns the candidate only if it is feasible and satisfies the
/// sign conditions on the fixed coordinates.
fn polish_active_set<P: LinearLeastSquares + ?Sized>(
    problem: &P,
    x: &DVector<f64>,
    g: &DVector<f64>,
    lb: &DVector<f64>,
    ub: &DVector<f64>,
) -> Option<(DVector<f64>, DVector<f64>)> {
    const MAX_ROUNDS: usize = 16;
    let n = x.len();
    // 0 = free, -1 = at lower, +1 = at upper.
    let mut state: Vec<i8> = (0..n)
        .map(|i| {
            let tol = near_bound_tolerance(lb[i], ub[i]);
            if lb[i].is_finite() && x[i] - lb[i] <= tol && g[i] > 0.0 {
                -1
            } else if ub[i].is_finite() && ub[i] - x[i] <= tol && g[i] < 0.0 {
                1
            } else {
                0
            }
        })
        .collect();

    for _ in 0..MAX_ROUNDS {
        let base = DVector::from_fn(n, |i, _| match state[i] {
            -1 => lb[i],
            1 => ub[i],
            _ => x[i],
        });
        let r = problem.residuals(&base);
        let grad = problem.apply_jacobian_transpose(&r);
        let d = DVector::from_fn(n, |i, _| if state[i] == 0 { 1.0 } else { 0.0 });
        let c = DVector::from_fn(n, |i, _| if state[i] == 0 { 0.0 } else { 1.0 });
        let rhs = DVector::from_fn(n, |i, _| if state[i] == 0 { -grad[i] } else { 0.0 });
        let step = problem.solve_scaled_normal(&d, &c, &rhs).ok()?;
        let step = step.component_mul(&d);
        let candidate = &base + &step;

        // Coordinates leaving the box become active.
        let mut changed = false;
        for i in 0..n {
            if state[i] == 0 {
                if candidate[i] < lb[i] {
                    state[i] = -1;
                    changed = true;
                } else if candidate[i] > ub[i] {
                    state[i] = 1;
                    changed = true;
                }
            }
        }
        if changed {
            continue;
        }

        let residual = problem.residuals(&candidate);
        let cg = problem.apply_jacobian_transpose(&residual);
        let scale = cg.amax().max(grad.amax()).max(f64::MIN_POSITIVE);
        // Release the fixed coordinate with the most wrongly signed multiplier.
        let mut worst: Option<(usize, f64)> = None;
        for i in 0..n {
            let violation = match state[i] {
                -1 => -cg[i],
                1 => cg[i],
                _ => 0.0,
            };
            if violation > 1e-12 * scale && worst.is_none_or(|(_, w)| violation > w) {
                worst = Some((i, violation));
            }
        }
        match worst {
            Some((i, _)) => state[i] = 0,
            None => return Some((candidate, residual)),
        }
    }
    None
}
