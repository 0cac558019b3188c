use super::ekf::{ekf_correct, ekf_predict};
use super::spkf::{spkf_correct, spkf_predict};
use super::{BaselineKind, Family, FilterParams, GaussianBelief, StepDiagnostics, StepOutput};
use crate::error::Result;
use crate::models::{observation_jacobian, transition_jacobians, SystemModel};
use crate::numerics::{pseudo_inverse, singular_values, Matrix, SpdMatrix, Vector, DEFAULT_PINV_TOL};
use crate::sigma::{cross_cov, generate, moments};

/// Below this `σ_max(H·G)` the input channel is treated as unobservable.
const SINGULAR_CHANNEL: f64 = 1e-12;

fn correct(
    family: Family,
    prior: &GaussianBelief,
    y: &Vector,
    model: &dyn SystemModel,
    r: &SpdMatrix,
    params: &FilterParams,
    diag: &mut StepDiagnostics,
) -> Result<(GaussianBelief, Matrix, Vector)> {
    Ok(match family {
        Family::Spkf => {
            let c = spkf_correct(prior, y, model, r, params.spread, diag)?;
            (c.posterior, c.gain, c.innovation)
        }
        Family::Ekf => {
            let c = ekf_correct(prior, y, model, r, params.jacobians, diag)?;
            (c.posterior, c.gain, c.innovation)
        }
    })
}

fn predict(
    family: Family,
    belief: &GaussianBelief,
    u: &Vector,
    model: &dyn SystemModel,
    q: &SpdMatrix,
    params: &FilterParams,
    diag: &mut StepDiagnostics,
) -> Result<GaussianBelief> {
    match family {
        Family::Spkf => spkf_predict(belief, u, model, q, params.spread, diag),
        Family::Ekf => ekf_predict(belief, u, model, q, params.jacobians, diag),
    }
}

/// Innovation, its covariance `R̃`, and the output map `H` against `prior`.
/// SPKF kinds use the statistical linearisation `H = P̂ˣʸᵀ·(P⁻)⁻¹`.
fn innovation_stage(
    family: Family,
    prior: &GaussianBelief,
    y: &Vector,
    model: &dyn SystemModel,
    r: &SpdMatrix,
    params: &FilterParams,
    diag: &mut StepDiagnostics,
) -> Result<(Vector, SpdMatrix, Matrix)> {
    match family {
        Family::Spkf => {
            let ens = generate(&prior.mean, &prior.cov, params.spread)?;
            let ys = ens.map(|x| model.observe(x));
            let (y_hat, pyy) = moments(&ens, &ys)?;
            let r_tilde = SpdMatrix::repair(pyy + r.matrix())?;
            diag.note(&r_tilde);
            let pxy = cross_cov(&ens, &ys)?;
            let h = prior.cov.solve(&pxy).transpose();
            Ok((y - y_hat, r_tilde, h))
        }
        Family::Ekf => {
            let h = observation_jacobian(model, &prior.mean, params.jacobians)?;
            let r_tilde = SpdMatrix::repair(&h * prior.cov.matrix() * h.transpose() + r.matrix())?;
            diag.note(&r_tilde);
            Ok((y - model.observe(&prior.mean), r_tilde, h))
        }
    }
}

/// Two-stage baseline step.
///
/// `prior` is the zero-input prediction from `previous_posterior`. The UI
/// kinds estimate `û` by least squares on the innovation through
/// `S = H·G` (`G` taken at the previous posterior with `u = 0`), re-predict
/// from the previous posterior with `û`, then correct. Because `y_t` carries
/// the effect of `u_{t−1}`, the emitted `û` estimates the previous input.
/// Plain kinds correct and predict with `u = 0`.
#[allow(clippy::too_many_arguments)]
pub fn baseline_step(
    kind: BaselineKind,
    prior: &GaussianBelief,
    previous_posterior: Option<&GaussianBelief>,
    y: &Vector,
    t: usize,
    model: &dyn SystemModel,
    params: &FilterParams,
    last_ui: &Vector,
) -> Result<StepOutput> {
    let mut diag = StepDiagnostics::default();
    let family = kind.family();
    let (q, r) = (params.q.at(t), params.r.at(t));
    let n = model.state_dim();
    let d = model.input_dim();
    let zero_u = Vector::zeros(d);

    let (posterior, gain, innovation, ui, ui_cov) = match previous_posterior {
        Some(prev) if kind.estimates_ui() => {
            let (innov, r_tilde, h) = innovation_stage(family, prior, y, model, r, params, &mut diag)?;
            let (_, g) = transition_jacobians(model, &prev.mean, &zero_u, params.jacobians)?;
            let s = &h * &g;
            let (u_hat, ui_cov) = if singular_values(&s)[0] <= SINGULAR_CHANNEL {
                diag.singular_least_squares = true;
                (last_ui.clone(), Matrix::zeros(d, d))
            } else {
                match kind {
                    BaselineKind::SpkfMvu | BaselineKind::EkfMvu => {
                        let w = r_tilde.solve(&s);
                        let info_inv = pseudo_inverse(&(s.transpose() * &w), DEFAULT_PINV_TOL);
                        let m = &info_inv * w.transpose();
                        (&m * &innov, info_inv)
                    }
                    _ => {
                        let m = pseudo_inverse(&s, DEFAULT_PINV_TOL);
                        let cov = &m * r_tilde.matrix() * m.transpose();
                        (&m * &innov, cov)
                    }
                }
            };
            let repredicted = predict(family, prev, &u_hat, model, q, params, &mut diag)?;
            let (post, gain, innov) = correct(family, &repredicted, y, model, r, params, &mut diag)?;
            (post, gain, innov, u_hat, ui_cov)
        }
        _ => {
            let (post, gain, innov) = correct(family, prior, y, model, r, params, &mut diag)?;
            let ui = if kind.estimates_ui() { last_ui.clone() } else { zero_u.clone() };
            (post, gain, innov, ui, Matrix::zeros(d, d))
        }
    };

    let prior_next = predict(family, &posterior, &zero_u, model, q, params, &mut diag)?;
    Ok(StepOutput {
        posterior,
        ui,
        ui_cov,
        cross: Matrix::zeros(n, d),
        prior_next,
        gain,
        innovation,
        diagnostics: diag,
    })
}
