//! Nonlinear least-squares UI solver and the UI sensitivity `M`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{UiEstimator, UiResidual};
use crate::numerics::{finite_diff_jacobian, pseudo_inverse, Matrix, Vector, DEFAULT_FD_STEP, DEFAULT_PINV_TOL};

const WOLFE_C1: f64 = 1e-4;
const WOLFE_C2: f64 = 0.1;
const MAX_LINE_SEARCH_EVALS: usize = 40;

/// Solver options for [`solve_nls`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NlsOptions {
    pub max_iters: usize,
    /// Stop once `‖∇‖Φ‖²‖ ≤ grad_tol`.
    pub grad_tol: f64,
    /// Stop once an accepted step is shorter than `step_tol·max(1, ‖u‖)`.
    pub step_tol: f64,
    /// Optional ridge weight `ρ`: minimise `‖Φ‖² + ρ‖u‖²` instead.
    pub tikhonov: f64,
}

impl Default for NlsOptions {
    fn default() -> Self {
        NlsOptions {
            max_iters: 50,
            grad_tol: 1e-10,
            step_tol: 1e-12,
            tikhonov: 0.0,
        }
    }
}

impl NlsOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters < 1 {
            return Err(Error::InvalidArgument("max_iters must be >= 1".into()));
        }
        if !(self.grad_tol > 0.0) || !(self.step_tol > 0.0) {
            return Err(Error::InvalidArgument("solver tolerances must be > 0".into()));
        }
        if !(self.tikhonov >= 0.0) || !self.tikhonov.is_finite() {
            return Err(Error::InvalidArgument("tikhonov weight must be finite and >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NlsStatus {
    Converged,
    StepTolerance,
    MaxIterations,
    /// The line search could not satisfy the strong Wolfe conditions; the
    /// best iterate so far is returned.
    LineSearchFailed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NlsReport {
    pub solution: Vector,
    pub iterations: usize,
    /// `‖Φ‖²` (plus the ridge term, if any) at the solution.
    pub objective: f64,
    pub gradient_norm: f64,
    pub status: NlsStatus,
}

impl NlsReport {
    pub fn warning(&self) -> bool {
        self.status == NlsStatus::LineSearchFailed
    }
}

struct Problem<'a> {
    residual: &'a dyn UiResidual,
    x: &'a Vector,
    ridge: f64,
}

#[derive(Clone)]
struct Eval {
    u: Vector,
    r: Vector,
    jac: Matrix,
    f: f64,
    g: Vector,
}

impl Problem<'_> {
    fn residual(&self, u: &Vector) -> Vector {
        let phi = self.residual.eval(self.x, u);
        if self.ridge > 0.0 {
            let s = self.ridge.sqrt();
            Vector::from_iterator(phi.len() + u.len(), phi.iter().copied().chain(u.iter().map(|v| s * v)))
        } else {
            phi
        }
    }

    fn jacobian(&self, u: &Vector) -> Result<Matrix> {
        let ju = match self.residual.jacobians(self.x, u) {
            Some((_, ju)) => ju,
            None => finite_diff_jacobian(|uu| self.residual.eval(self.x, uu), u, DEFAULT_FD_STEP)?,
        };
        if self.ridge > 0.0 {
            let d = u.len();
            let mut j = Matrix::zeros(ju.nrows() + d, d);
            j.rows_mut(0, ju.nrows()).copy_from(&ju);
            j.rows_mut(ju.nrows(), d).fill_with_identity();
            j.rows_mut(ju.nrows(), d).scale_mut(self.ridge.sqrt());
            Ok(j)
        } else {
            Ok(ju)
        }
    }

    /// Objective and gradient; `None` when the residual is not finite there.
    fn eval(&self, u: Vector) -> Result<Option<Eval>> {
        let r = self.residual(&u);
        if r.iter().any(|v| !v.is_finite()) {
            return Ok(None);
        }
        let jac = self.jacobian(&u)?;
        let f = r.norm_squared();
        let g = jac.transpose() * &r * 2.0;
        if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Ok(None);
        }
        Ok(Some(Eval { u, r, jac, f, g }))
    }
}

/// Minimises `‖Φ(x, u)‖²` over `u` with Polak–Ribière+ nonlinear conjugate
/// gradients, restarting every `dim(u)` iterations or on loss of descent.
///
/// The line search enforces the strong Wolfe conditions. Its first trial step
/// is the exact minimiser of the Gauss–Newton model along the search
/// direction, which makes the method exact CG on linear residuals.
pub fn solve_nls(
    residual: &dyn UiResidual,
    x: &Vector,
    warm_start: &Vector,
    opts: &NlsOptions,
) -> Result<NlsReport> {
    opts.validate()?;
    let d = residual.input_dim();
    if warm_start.len() != d {
        return Err(Error::dim("warm start", d, warm_start.len()));
    }
    let problem = Problem {
        residual,
        x,
        ridge: opts.tikhonov,
    };
    let mut cur = problem
        .eval(warm_start.clone())?
        .ok_or_else(|| Error::non_finite("UI residual at warm start"))?;
    if cur.r.len() != residual.residual_dim() + if opts.tikhonov > 0.0 { d } else { 0 } {
        return Err(Error::dim("UI residual", residual.residual_dim(), cur.r.len()));
    }
    let report = |e: &Eval, iterations, status| NlsReport {
        solution: e.u.clone(),
        iterations,
        objective: e.f,
        gradient_norm: e.g.norm(),
        status,
    };
    if cur.g.norm() <= opts.grad_tol {
        return Ok(report(&cur, 0, NlsStatus::Converged));
    }
    let mut dir = -&cur.g;
    let mut since_restart = 0;
    for iter in 1..=opts.max_iters {
        let mut slope = cur.g.dot(&dir);
        if !(slope < 0.0) {
            dir = -&cur.g;
            slope = cur.g.dot(&dir);
            since_restart = 0;
        }
        let jd = &cur.jac * &dir;
        let curvature = jd.norm_squared();
        let alpha0 = if curvature > 0.0 {
            -slope / (2.0 * curvature)
        } else {
            1.0 / dir.norm()
        };
        let next = match line_search(&problem, &cur, &dir, slope, alpha0)? {
            LineSearch::Accepted(e) => e,
            LineSearch::Failed(best) => {
                let best = best.filter(|e| e.f < cur.f).unwrap_or(cur);
                return Ok(report(&best, iter, NlsStatus::LineSearchFailed));
            }
        };
        let step = (&next.u - &cur.u).norm();
        let g_prev = std::mem::replace(&mut cur, next).g;
        if cur.g.norm() <= opts.grad_tol {
            return Ok(report(&cur, iter, NlsStatus::Converged));
        }
        if step <= opts.step_tol * cur.u.norm().max(1.0) {
            return Ok(report(&cur, iter, NlsStatus::StepTolerance));
        }
        since_restart += 1;
        let beta = if since_restart >= d {
            since_restart = 0;
            0.0
        } else {
            (cur.g.dot(&(&cur.g - &g_prev)) / g_prev.norm_squared()).max(0.0)
        };
        dir = -&cur.g + dir * beta;
    }
    Ok(report(&cur, opts.max_iters, NlsStatus::MaxIterations))
}

enum LineSearch {
    Accepted(Eval),
    /// Carries the best sufficient-decrease point seen, if any.
    Failed(Option<Eval>),
}

/// Strong-Wolfe line search (bracketing followed by zoom).
fn line_search(
    problem: &Problem<'_>,
    start: &Eval,
    dir: &Vector,
    slope0: f64,
    alpha0: f64,
) -> Result<LineSearch> {
    let f0 = start.f;
    let at = |alpha: f64| -> Result<Option<Eval>> { problem.eval(&start.u + dir * alpha) };
    let armijo = |alpha: f64, f: f64| f <= f0 + WOLFE_C1 * alpha * slope0;
    let curvature_ok = |e: &Eval| e.g.dot(dir).abs() <= -WOLFE_C2 * slope0;

    let mut prev: (f64, f64, f64) = (0.0, f0, slope0);
    let mut alpha = alpha0;
    let mut evals = 0;
    while evals < MAX_LINE_SEARCH_EVALS {
        evals += 1;
        let Some(e) = at(alpha)? else {
            // Step left the residual's finite domain: shrink.
            alpha *= 0.5;
            continue;
        };
        let d_alpha = e.g.dot(dir);
        if !armijo(alpha, e.f) || (evals > 1 && e.f >= prev.1) {
            return zoom(problem, start, dir, slope0, prev, (alpha, e.f, d_alpha), evals);
        }
        if curvature_ok(&e) {
            return Ok(LineSearch::Accepted(e));
        }
        if d_alpha >= 0.0 {
            return zoom(problem, start, dir, slope0, (alpha, e.f, d_alpha), prev, evals);
        }
        prev = (alpha, e.f, d_alpha);
        alpha *= 2.0;
    }
    Ok(LineSearch::Failed(None))
}

/// Zoom phase; `lo`/`hi` are `(α, φ(α), φ'(α))` triples with `lo` the better end.
fn zoom(
    problem: &Problem<'_>,
    start: &Eval,
    dir: &Vector,
    slope0: f64,
    mut lo: (f64, f64, f64),
    mut hi: (f64, f64, f64),
    mut evals: usize,
) -> Result<LineSearch> {
    let f0 = start.f;
    let mut best: Option<Eval> = None;
    while evals < MAX_LINE_SEARCH_EVALS {
        evals += 1;
        let alpha = interpolate(lo, hi);
        let Some(e) = problem.eval(&start.u + dir * alpha)? else {
            hi = (alpha, f64::INFINITY, 0.0);
            continue;
        };
        let d_alpha = e.g.dot(dir);
        if e.f > f0 + WOLFE_C1 * alpha * slope0 || e.f >= lo.1 {
            hi = (alpha, e.f, d_alpha);
        } else {
            if d_alpha.abs() <= -WOLFE_C2 * slope0 {
                return Ok(LineSearch::Accepted(e));
            }
            if d_alpha * (hi.0 - lo.0) >= 0.0 {
                hi = lo;
            }
            lo = (alpha, e.f, d_alpha);
            best = Some(e);
        }
        if (hi.0 - lo.0).abs() <= f64::EPSILON * lo.0.abs().max(1e-300) {
            break;
        }
    }
    Ok(LineSearch::Failed(best))
}

/// Safeguarded cubic interpolation between two bracket ends.
fn interpolate(lo: (f64, f64, f64), hi: (f64, f64, f64)) -> f64 {
    let (a, fa, da) = lo;
    let (b, fb, db) = hi;
    let (left, right) = if a < b { (a, b) } else { (b, a) };
    let width = right - left;
    let fallback = 0.5 * (a + b);
    if !fb.is_finite() {
        return fallback;
    }
    let d1 = da + db - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - da * db;
    if disc < 0.0 {
        return fallback;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let c = b - (b - a) * (db + d2 - d1) / (db - da + 2.0 * d2);
    if c.is_finite() && c > left + 0.1 * width && c < right - 0.1 * width {
        c
    } else {
        fallback
    }
}

/// Sign convention for the residual-case sensitivity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensitivitySign {
    /// `M = (∂Φ/∂u)⁺·∂Φ/∂x`.
    #[default]
    Verbatim,
    /// `M = −(∂Φ/∂u)⁺·∂Φ/∂x`, the implicit-function derivative of the argmin map.
    ImplicitFunction,
}

/// UI sensitivity `M` (`d × n`).
///
/// Residual estimators: `M = ±(∂Φ/∂u)⁺·(∂Φ/∂x)` at `(x̂, û)`. Direct models:
/// `M = ∂φ/∂x` at `x̂` (`û` is ignored).
pub fn ui_sensitivity(est: &UiEstimator, x: &Vector, u: &Vector, sign: SensitivitySign) -> Result<Matrix> {
    let m = match est {
        UiEstimator::Residual { residual, .. } => {
            let (phi_x, phi_u) = match residual.jacobians(x, u) {
                Some(j) => j,
                None => (
                    finite_diff_jacobian(|xx| residual.eval(xx, u), x, DEFAULT_FD_STEP)?,
                    finite_diff_jacobian(|uu| residual.eval(x, uu), u, DEFAULT_FD_STEP)?,
                ),
            };
            let m = pseudo_inverse(&phi_u, DEFAULT_PINV_TOL) * phi_x;
            match sign {
                SensitivitySign::Verbatim => m,
                SensitivitySign::ImplicitFunction => -m,
            }
        }
        UiEstimator::Direct(model) => match model.jacobian(x) {
            Some(j) => j,
            None => finite_diff_jacobian(|xx| model.eval(xx), x, DEFAULT_FD_STEP)?,
        },
    };
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::non_finite("UI sensitivity"));
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{quasi_static_residual, synthetic_direct_ui, FnResidual, QuasiStatic, RigidLinkParams};
    use crate::numerics::SeededRng;
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_2;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    /// `A·u − c` with its exact Jacobian.
    struct Affine {
        a: Matrix,
        c: Vector,
    }

    impl UiResidual for Affine {
        fn input_dim(&self) -> usize {
            self.a.ncols()
        }
        fn residual_dim(&self) -> usize {
            self.a.nrows()
        }
        fn eval(&self, _x: &Vector, u: &Vector) -> Vector {
            &self.a * u - &self.c
        }
        fn jacobians(&self, x: &Vector, _u: &Vector) -> Option<(Matrix, Matrix)> {
            Some((Matrix::zeros(self.a.nrows(), x.len()), self.a.clone()))
        }
    }

    fn linear_residual(a: Matrix, c: Vector) -> Affine {
        Affine { a, c }
    }

    #[test]
    fn linear_least_squares_matches_normal_equations() {
        let mut rng = SeededRng::new(5);
        for k in 1..=8 {
            let a = Matrix::from_fn(k + 3, k, |_, _| rng.standard_normal());
            let c = Vector::from_fn(k + 3, |_, _| rng.standard_normal());
            let oracle = (a.transpose() * &a).cholesky().unwrap().solve(&(a.transpose() * &c));
            let res = linear_residual(a, c);
            let r = solve_nls(&res, &Vector::zeros(0), &Vector::zeros(k), &NlsOptions::default()).unwrap();
            assert_relative_eq!(r.solution, oracle, epsilon = 1e-8);
            assert!(r.iterations <= k, "k={k} took {}", r.iterations);
        }
    }

    #[test]
    fn quasi_static_solve_at_upright() {
        let p = RigidLinkParams::default();
        let res = QuasiStatic { params: p };
        let x = v(&[2.0, FRAC_PI_2]);
        let r = solve_nls(&res, &x, &v(&[0.0, 0.0]), &NlsOptions::default()).unwrap();
        assert_relative_eq!(r.solution, v(&[10.0, 0.0]), epsilon = 1e-8);
        assert!(res.eval(&x, &r.solution).norm() <= 1e-8);
        assert_eq!(r.status, NlsStatus::Converged);
    }

    #[test]
    fn optimal_warm_start_is_returned_unchanged() {
        let res = QuasiStatic {
            params: RigidLinkParams::default(),
        };
        let x = v(&[2.0, FRAC_PI_2]);
        let warm = v(&[10.0, 0.0]);
        let r = solve_nls(&res, &x, &warm, &NlsOptions::default()).unwrap();
        assert_eq!(r.iterations, 0);
        assert_eq!(r.solution, warm);
    }

    #[test]
    fn nonlinear_residual_decreases() {
        let res = FnResidual::new(2, 2, |_, u| v(&[u[0] * u[0] - 2.0, (u[1] - 1.0).sin()]));
        let r = solve_nls(&res, &Vector::zeros(0), &v(&[3.0, 0.2]), &NlsOptions::default()).unwrap();
        assert_relative_eq!(r.solution, v(&[2f64.sqrt(), 1.0]), epsilon = 1e-6);
    }

    #[test]
    fn ridge_selects_smaller_solution() {
        let res = FnResidual::new(2, 1, |_, u| v(&[u[0] + u[1] - 2.0]));
        let opts = NlsOptions {
            tikhonov: 1e-3,
            max_iters: 200,
            ..NlsOptions::default()
        };
        let r = solve_nls(&res, &Vector::zeros(0), &v(&[5.0, -1.0]), &opts).unwrap();
        assert!((r.solution[0] - r.solution[1]).abs() < 1e-6);
    }

    #[test]
    fn non_finite_warm_start_is_an_error() {
        let res = FnResidual::new(1, 1, |_, u| v(&[u[0].ln()]));
        assert!(matches!(
            solve_nls(&res, &Vector::zeros(0), &v(&[-1.0]), &NlsOptions::default()),
            Err(Error::NonFiniteEvaluation { .. })
        ));
    }

    #[test]
    fn sensitivity_examples() {
        let est = quasi_static_residual(RigidLinkParams::default(), NlsOptions::default());
        let m = ui_sensitivity(&est, &v(&[0.0, FRAC_PI_2]), &v(&[10.0, 0.0]), SensitivitySign::Verbatim).unwrap();
        assert_relative_eq!(m, Matrix::from_row_slice(2, 2, &[-5.0, -9.81, 0.0, 0.0]), epsilon = 1e-12);
        let flipped =
            ui_sensitivity(&est, &v(&[0.0, FRAC_PI_2]), &v(&[10.0, 0.0]), SensitivitySign::ImplicitFunction).unwrap();
        assert_relative_eq!(flipped, -m, epsilon = 1e-15);

        let lin = Matrix::from_row_slice(1, 2, &[0.5, -2.0]);
        let l2 = lin.clone();
        let direct = synthetic_direct_ui(1, move |x| &l2 * x);
        let md = ui_sensitivity(&direct, &v(&[0.3, 0.1]), &v(&[0.0]), SensitivitySign::Verbatim).unwrap();
        assert_relative_eq!(md, lin, epsilon = 1e-9);

        let constant = UiEstimator::Residual {
            residual: std::sync::Arc::new(FnResidual::new(1, 1, |_, u| v(&[u[0] - 1.0]))),
            options: NlsOptions::default(),
        };
        let mz = ui_sensitivity(&constant, &v(&[0.3, 0.1]), &v(&[1.0]), SensitivitySign::Verbatim).unwrap();
        assert_eq!(mz, Matrix::zeros(1, 2));
    }

    #[test]
    fn invalid_options_rejected() {
        let bad = NlsOptions {
            max_iters: 0,
            ..NlsOptions::default()
        };
        assert!(bad.validate().is_err());
    }
}
