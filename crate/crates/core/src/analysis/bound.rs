use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::{FilterParams, FilterRun};
use crate::models::{observation_jacobian, transition_jacobians, SystemModel, UiEstimator};
use crate::numerics::{singular_values, Matrix};
use crate::optimize::ui_sensitivity;

/// Singular values below this fraction of `σ_max` count as zero.
const RANK_TOL: f64 = 1e-12;

/// Scalar matrix bounds for one step: `x_max`/`x_min` are the largest and
/// smallest singular values of the corresponding matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub f_max: f64,
    pub m_max: f64,
    pub g_max: f64,
    pub g_min: f64,
    pub h_max: f64,
    pub h_min: f64,
    pub q_min: f64,
    pub e_min: f64,
    pub r_min: f64,
    pub r_max: f64,
    pub p_min: f64,
    pub p_max: f64,
}

impl BoundInputs {
    /// Every scalar set to `v`.
    pub fn uniform(v: f64) -> Self {
        BoundInputs {
            f_max: v,
            m_max: v,
            g_max: v,
            g_min: v,
            h_max: v,
            h_min: v,
            q_min: v,
            e_min: v,
            r_min: v,
            r_max: v,
            p_min: v,
            p_max: v,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.f_max, self.m_max, self.g_max, self.g_min, self.h_max, self.h_min, self.q_min, self.e_min,
            self.r_min, self.r_max, self.p_min, self.p_max,
        ];
        if all.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidArgument("bound inputs must be finite and >= 0".into()));
        }
        let pairs = [
            (self.g_min, self.g_max),
            (self.h_min, self.h_max),
            (self.r_min, self.r_max),
            (self.p_min, self.p_max),
        ];
        if pairs.iter().any(|(lo, hi)| lo > hi) {
            return Err(Error::InvalidArgument("a lower bound exceeds its upper bound".into()));
        }
        Ok(())
    }
}

/// Extracted bounds plus the lower bounds that came out as zero.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundStep {
    pub inputs: BoundInputs,
    /// Names of rank-deficient lower bounds (`g_min`, `h_min`, `q_min`,
    /// `e_min`, `r_min`, `p_min`).
    pub rank_deficient: Vec<&'static str>,
}

impl BoundStep {
    /// The bound needs `p_min` and `r_min` as divisors; the other lower bounds
    /// only enter numerators, where zero is merely conservative.
    pub fn defined(&self) -> bool {
        !self.rank_deficient.iter().any(|n| *n == "p_min" || *n == "r_min")
    }
}

fn extremes(m: &Matrix) -> (f64, f64, bool) {
    let s = singular_values(m);
    let max = s[0];
    let min = *s.last().expect("non-empty matrix");
    if min <= RANK_TOL * max || max == 0.0 {
        (max, 0.0, true)
    } else {
        (max, min, false)
    }
}

/// Per-step scalar bounds: `F`, `G` at `(x̂_t, û_t)`, `H` at `x̂⁻_t`, `M` from
/// the UI sensitivity, `p` from the posterior covariance, `q`/`e`/`r` from
/// the filter's covariances.
pub fn extract_bound_inputs(
    run: &FilterRun,
    model: &dyn SystemModel,
    ui_est: &UiEstimator,
    params: &FilterParams,
) -> Result<Vec<BoundStep>> {
    let mode = params.jacobians;
    run.outputs
        .iter()
        .enumerate()
        .map(|(t, o)| {
            let x = &o.posterior.mean;
            let (f, g) = transition_jacobians(model, x, &o.ui, mode)?;
            let h = observation_jacobian(model, &run.prior_at(t).mean, mode)?;
            let m = ui_sensitivity(ui_est, x, &o.ui, params.sensitivity_sign)?;
            let e = params.e_at(t)?;
            let mut flags = Vec::new();
            let mut lower = |name: &'static str, (max, min, deficient): (f64, f64, bool)| {
                if deficient {
                    flags.push(name);
                }
                (max, min)
            };
            let (g_max, g_min) = lower("g_min", extremes(&g));
            let (h_max, h_min) = lower("h_min", extremes(&h));
            let (_, q_min) = lower("q_min", extremes(params.q.at(t).matrix()));
            let (_, e_min) = lower("e_min", extremes(e.matrix()));
            let (r_max, r_min) = lower("r_min", extremes(params.r.at(t).matrix()));
            let (p_max, p_min) = lower("p_min", extremes(o.posterior.cov.matrix()));
            Ok(BoundStep {
                inputs: BoundInputs {
                    f_max: singular_values(&f)[0],
                    m_max: singular_values(&m)[0],
                    g_max,
                    g_min,
                    h_max,
                    h_min,
                    q_min,
                    e_min,
                    r_min,
                    r_max,
                    p_min,
                    p_max,
                },
                rank_deficient: flags,
            })
        })
        .collect()
}

/// `λ_t` and `σ_t = 1 − 1/λ_t`; `next` holds the `t+1` bounds.
pub fn lambda_sigma(b: &BoundInputs, next: &BoundInputs) -> Result<(f64, f64)> {
    let denom = b.p_max * (b.f_max + b.g_max * b.m_max).powi(2);
    if !(denom > 0.0) {
        return Err(Error::DivisionByZero {
            what: "lambda denominator p̄(f̄ + ḡm̄)²".into(),
        });
    }
    if !(next.r_max > 0.0) || !(next.r_min > 0.0) {
        return Err(Error::DivisionByZero {
            what: "measurement-noise bounds".into(),
        });
    }
    let obs = next.p_min.powi(2) * next.h_min.powi(2)
        / (next.r_max * (1.0 + next.p_max * next.h_max.powi(2) / next.r_min).powi(2));
    let lambda = 1.0 + (b.q_min + b.g_min.powi(2) * b.e_min + obs) / denom;
    Ok((lambda, 1.0 - 1.0 / lambda))
}

/// Noise bound constants `δ_w`, `δ_ε`, `δ_v`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseBounds {
    pub delta_w: f64,
    pub delta_eps: f64,
    pub delta_v: f64,
}

/// `μ_t = n·γ·δ_w + d·ḡ²·γ·δ_ε + m·(p̄₊h̄₊²/r̲₊²)·δ_v` with
/// `γ = 1/p̲ + 2h̄²/r̲ + p̄h̄⁴/r̲²`.
pub fn mu(b: &BoundInputs, next: &BoundInputs, deltas: &NoiseBounds, n: usize, d: usize, m: usize) -> Result<f64> {
    if !(b.p_min > 0.0) || !(b.r_min > 0.0) || !(next.r_min > 0.0) {
        return Err(Error::DivisionByZero {
            what: "mu requires p̲ > 0 and r̲ > 0".into(),
        });
    }
    let gamma = gamma(b);
    let (n, d, m) = (n as f64, d as f64, m as f64);
    Ok(n * gamma * deltas.delta_w
        + d * b.g_max.powi(2) * gamma * deltas.delta_eps
        + m * (next.p_max * next.h_max.powi(2) / next.r_min.powi(2)) * deltas.delta_v)
}

/// `γ = 1/p̲ + 2h̄²/r̲ + p̄h̄⁴/r̲²`.
pub fn gamma(b: &BoundInputs) -> f64 {
    1.0 / b.p_min + 2.0 * b.h_max.powi(2) / b.r_min + b.p_max * b.h_max.powi(4) / b.r_min.powi(2)
}

/// Per-step stability quantities and the mean-square error bound `B_t`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundTrace {
    pub lambda: Vec<f64>,
    pub sigma: Vec<f64>,
    pub mu: Vec<f64>,
    pub bound: Vec<f64>,
}

impl BoundTrace {
    pub fn len(&self) -> usize {
        self.bound.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bound.is_empty()
    }
}

/// `B_t = p̄_t·(E‖x̃₀‖²·Π_{i<t}(1−σ_i)/p̲₀ + Σ_{i<t} μ_i·Π_{j=i+1}^{t−1}(1−σ_j))`,
/// accumulated in O(1) per step.
pub fn error_bound_trace(
    lambda_sigma_mu: &[(f64, f64, f64)],
    p_min0: f64,
    p_max: &[f64],
    initial_error: f64,
) -> Result<BoundTrace> {
    if p_max.len() != lambda_sigma_mu.len() {
        return Err(Error::dim("p̄ sequence", lambda_sigma_mu.len(), p_max.len()));
    }
    if !(p_min0 > 0.0) {
        return Err(Error::DivisionByZero {
            what: "initial p̲₀".into(),
        });
    }
    let mut trace = BoundTrace::default();
    let (mut decay, mut accumulated) = (1.0, 0.0);
    for (&(lambda, sigma, mu), &pb) in lambda_sigma_mu.iter().zip(p_max) {
        trace.bound.push(pb * (initial_error * decay / p_min0 + accumulated));
        trace.lambda.push(lambda);
        trace.sigma.push(sigma);
        trace.mu.push(mu);
        decay *= 1.0 - sigma;
        accumulated = accumulated * (1.0 - sigma) + mu;
    }
    Ok(trace)
}

/// Noise levels and initial error used by [`bound_for_run`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundSettings {
    pub delta_w: f64,
    pub delta_v: f64,
    /// `None` takes `δ_ε` from `e̲_t`.
    pub delta_eps: Option<f64>,
    /// `E‖x̃₀‖²`.
    pub initial_error: f64,
}

/// Bound trace for a filter run. The `t+1` quantities of the last step reuse
/// that step's own bounds.
pub fn bound_for_run(
    run: &FilterRun,
    model: &dyn SystemModel,
    ui_est: &UiEstimator,
    params: &FilterParams,
    settings: &BoundSettings,
) -> Result<BoundTrace> {
    let steps = extract_bound_inputs(run, model, ui_est, params)?;
    let (n, d, m) = (model.state_dim(), model.input_dim(), model.output_dim());
    let mut lsm = Vec::with_capacity(steps.len());
    for (t, s) in steps.iter().enumerate() {
        let next = &steps[(t + 1).min(steps.len() - 1)];
        let ctx = |e: Error| e.at_step(t);
        if !s.defined() || !next.defined() {
            return Err(ctx(Error::DivisionByZero {
                what: format!("rank-deficient lower bound {:?}", s.rank_deficient),
            }));
        }
        let (lambda, sigma) = lambda_sigma(&s.inputs, &next.inputs).map_err(ctx)?;
        let deltas = NoiseBounds {
            delta_w: settings.delta_w,
            delta_eps: settings.delta_eps.unwrap_or(s.inputs.e_min),
            delta_v: settings.delta_v,
        };
        let mu_t = mu(&s.inputs, &next.inputs, &deltas, n, d, m).map_err(ctx)?;
        lsm.push((lambda, sigma, mu_t));
    }
    let p_max: Vec<f64> = steps.iter().map(|s| s.inputs.p_max).collect();
    error_bound_trace(&lsm, steps[0].inputs.p_min, &p_max, settings.initial_error)
}

/// Fraction of steps `t > transient` with `bound_t ≥ empirical_t`.
pub fn bound_coverage(bound: &[f64], empirical: &[f64], transient: usize) -> Result<f64> {
    if bound.len() != empirical.len() {
        return Err(Error::dim("empirical error sequence", bound.len(), empirical.len()));
    }
    let post: Vec<bool> = bound
        .iter()
        .zip(empirical)
        .skip(transient + 1)
        .map(|(b, e)| b >= e)
        .collect();
    if post.is_empty() {
        return Err(Error::InvalidArgument("no post-transient steps".into()));
    }
    Ok(post.iter().filter(|ok| **ok).count() as f64 / post.len() as f64)
}

/// Outcome of tuning `E` over a candidate grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneReport {
    pub chosen: f64,
    pub coverage_required: f64,
    /// `(candidate, coverage)` in ascending candidate order.
    pub candidates: Vec<(f64, f64)>,
}

/// Smallest grid value of `E` whose bound covers the empirical error on at
/// least `coverage` of the post-transient steps. `evaluate` returns the
/// `(bound, empirical)` sequences for a candidate.
pub fn tune_e<F>(grid: &[f64], transient: usize, coverage: f64, mut evaluate: F) -> Result<TuneReport>
where
    F: FnMut(f64) -> Result<(Vec<f64>, Vec<f64>)>,
{
    let mut sorted = grid.to_vec();
    if sorted.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
        return Err(Error::InvalidArgument("E candidates must be finite and >= 0".into()));
    }
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let mut candidates = Vec::with_capacity(sorted.len());
    for e in sorted {
        let (bound, empirical) = evaluate(e)?;
        candidates.push((e, bound_coverage(&bound, &empirical, transient)?));
    }
    let chosen = candidates
        .iter()
        .find(|(_, c)| *c >= coverage)
        .map(|(e, _)| *e)
        .ok_or(Error::NoFeasibleE)?;
    Ok(TuneReport {
        chosen,
        coverage_required: coverage,
        candidates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn all_ones_substitution() {
        let ones = BoundInputs::uniform(1.0);
        let (lambda, sigma) = lambda_sigma(&ones, &ones).unwrap();
        assert_relative_eq!(lambda, 1.5625, epsilon = 1e-12);
        assert_relative_eq!(sigma, 0.36, epsilon = 1e-12);
        assert_relative_eq!(gamma(&ones), 4.0, epsilon = 1e-12);
        let deltas = NoiseBounds {
            delta_w: 1.0,
            delta_eps: 1.0,
            delta_v: 1.0,
        };
        assert_relative_eq!(mu(&ones, &ones, &deltas, 1, 1, 1).unwrap(), 9.0, epsilon = 1e-12);
    }

    #[test]
    fn vanishing_numerator_gives_unit_lambda() {
        let b = BoundInputs {
            q_min: 0.0,
            e_min: 0.0,
            h_min: 0.0,
            ..BoundInputs::uniform(1.0)
        };
        let (lambda, sigma) = lambda_sigma(&b, &b).unwrap();
        assert_eq!(lambda, 1.0);
        assert_eq!(sigma, 0.0);
    }

    #[test]
    fn sigma_increases_with_q() {
        let b = BoundInputs::uniform(1.0);
        let b2 = BoundInputs { q_min: 2.0, ..b };
        assert!(lambda_sigma(&b2, &b).unwrap().1 > lambda_sigma(&b, &b).unwrap().1);
    }

    #[test]
    fn zero_denominator_is_reported() {
        let b = BoundInputs {
            f_max: 0.0,
            g_max: 0.0,
            ..BoundInputs::uniform(1.0)
        };
        assert!(matches!(lambda_sigma(&b, &b), Err(Error::DivisionByZero { .. })));
    }

    #[test]
    fn mu_is_linear_in_deltas() {
        let b = BoundInputs::uniform(0.7);
        let zero = NoiseBounds {
            delta_w: 0.0,
            delta_eps: 0.0,
            delta_v: 0.0,
        };
        assert_eq!(mu(&b, &b, &zero, 2, 2, 3).unwrap(), 0.0);
        let d1 = NoiseBounds {
            delta_w: 0.3,
            delta_eps: 0.1,
            delta_v: 0.2,
        };
        let d2 = NoiseBounds {
            delta_w: 0.6,
            delta_eps: 0.2,
            delta_v: 0.4,
        };
        assert_relative_eq!(
            mu(&b, &b, &d2, 2, 2, 3).unwrap(),
            2.0 * mu(&b, &b, &d1, 2, 2, 3).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn pure_exponential_decay() {
        let sigma = 0.2;
        let lsm = vec![(1.25, sigma, 0.0); 20];
        let p = vec![1.5; 20];
        let tr = error_bound_trace(&lsm, 0.5, &p, 2.0).unwrap();
        for (t, b) in tr.bound.iter().enumerate() {
            assert_relative_eq!(*b, 1.5 / 0.5 * 2.0 * (1.0 - sigma).powi(t as i32), epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_sigma_accumulates_linearly() {
        let lsm = vec![(1.0, 0.0, 0.5); 10];
        let tr = error_bound_trace(&lsm, 1.0, &[2.0; 10], 1.0).unwrap();
        for (t, b) in tr.bound.iter().enumerate() {
            assert_relative_eq!(*b, 2.0 * (1.0 + 0.5 * t as f64), epsilon = 1e-12);
        }
    }

    #[test]
    fn geometric_series_limit() {
        let lsm = vec![(2.0, 0.5, 1.0); 80];
        let tr = error_bound_trace(&lsm, 1.0, &[1.0; 80], 0.0).unwrap();
        assert_relative_eq!(*tr.bound.last().unwrap(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn nonincreasing_without_noise() {
        let lsm: Vec<_> = (0..50).map(|t| (1.0, 0.01 * (t % 7) as f64, 0.0)).collect();
        let tr = error_bound_trace(&lsm, 1.0, &[1.0; 50], 3.0).unwrap();
        assert!(tr.bound.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn tuning_picks_smallest_feasible() {
        let empirical = vec![1.0; 300];
        let report = tune_e(&[35.0, 0.0, 10.0], 100, 0.99, |e| Ok((vec![0.9 + e / 20.0; 300], empirical.clone()))).unwrap();
        assert_eq!(report.chosen, 10.0);
        assert_eq!(report.candidates.len(), 3);
        assert_eq!(report.candidates[0], (0.0, 0.0));
        let none = tune_e(&[0.0], 100, 0.99, |_| Ok((vec![0.0; 300], empirical.clone())));
        assert!(matches!(none, Err(Error::NoFeasibleE)));
    }

    #[test]
    fn identity_matrices_give_unit_extremes() {
        let (max, min, deficient) = extremes(&Matrix::identity(3, 3));
        assert_eq!((max, min, deficient), (1.0, 1.0, false));
        let r = Matrix::identity(3, 3) * 0.5;
        let (max, min, _) = extremes(&r);
        assert_relative_eq!(max, 0.5);
        assert_relative_eq!(min, 0.5);
    }

    #[test]
    fn rigid_link_input_jacobian_singular_values() {
        // G rows are h·[sin x₂, −cos x₂]/(ml²) and ½h²·[sin x₂, −cos x₂]/(ml²): rank one with
        // σ_max = ‖(h, ½h²)‖ since ‖(sin, −cos)‖ = 1.
        let h: f64 = 0.01;
        let x2: f64 = 0.8;
        let g = Matrix::from_row_slice(
            2,
            2,
            &[h * x2.sin(), -h * x2.cos(), 0.5 * h * h * x2.sin(), -0.5 * h * h * x2.cos()],
        );
        let (max, min, deficient) = extremes(&g);
        assert_relative_eq!(max, (h * h + 0.25 * h.powi(4)).sqrt(), epsilon = 1e-15);
        assert_eq!(min, 0.0);
        assert!(deficient);
    }
}
