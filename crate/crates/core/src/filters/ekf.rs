use super::{FilterParams, GaussianBelief, StepDiagnostics, StepOutput, Variant};
use crate::error::Result;
use crate::models::{observation_jacobian, transition_jacobians, JacobianMode, SystemModel, UiEstimator};
use crate::numerics::{Matrix, SpdMatrix, Vector};
use crate::optimize::ui_sensitivity;

pub(crate) struct EkfCorrection {
    pub posterior: GaussianBelief,
    pub gain: Matrix,
    pub innovation: Vector,
}

pub(crate) fn ekf_correct(
    prior: &GaussianBelief,
    y: &Vector,
    model: &dyn SystemModel,
    r: &SpdMatrix,
    mode: JacobianMode,
    diag: &mut StepDiagnostics,
) -> Result<EkfCorrection> {
    let h = observation_jacobian(model, &prior.mean, mode)?;
    let p = prior.cov.matrix();
    let s = SpdMatrix::repair(&h * p * h.transpose() + r.matrix())?;
    diag.note(&s);
    let pht = p * h.transpose();
    let gain = s.solve(&pht.transpose()).transpose();
    let innovation = y - model.observe(&prior.mean);
    let mean = &prior.mean + &gain * &innovation;
    let n = prior.dim();
    let cov = SpdMatrix::repair((Matrix::identity(n, n) - &gain * &h) * p)?;
    diag.note(&cov);
    Ok(EkfCorrection {
        posterior: GaussianBelief::new(mean, cov)?,
        gain,
        innovation,
    })
}

pub(crate) fn ekf_predict(
    belief: &GaussianBelief,
    u: &Vector,
    model: &dyn SystemModel,
    q: &SpdMatrix,
    mode: JacobianMode,
    diag: &mut StepDiagnostics,
) -> Result<GaussianBelief> {
    let (f, _) = transition_jacobians(model, &belief.mean, u, mode)?;
    let cov = SpdMatrix::repair(&f * belief.cov.matrix() * f.transpose() + q.matrix())?;
    diag.note(&cov);
    GaussianBelief::new(model.transition(&belief.mean, u), cov)
}

/// One EKF-nUI step: linearised correction, UI estimation with sensitivity
/// `M`, and prediction with `J = F + G·M`.
#[allow(clippy::too_many_arguments)]
pub fn ekf_nui_step(
    prior: &GaussianBelief,
    y: &Vector,
    t: usize,
    model: &dyn SystemModel,
    est: &UiEstimator,
    params: &FilterParams,
    variant: Variant,
    warm: &Vector,
) -> Result<StepOutput> {
    let mut diag = StepDiagnostics::default();
    let mode = params.jacobians;
    let e = params.e_at(t)?;
    let q = params.q.at(t);

    let corr = ekf_correct(prior, y, model, params.r.at(t), mode, &mut diag)?;
    let post = &corr.posterior;
    let p = post.cov.matrix();

    let base = match variant {
        Variant::NuiI => &prior.mean,
        Variant::Nui | Variant::NuiII => &post.mean,
    };
    let sol = est.estimate(base, warm)?;
    diag.ui_solves += 1;
    diag.solver_warnings += usize::from(sol.warning());
    let u_hat = sol.solution;
    let m = ui_sensitivity(est, base, &u_hat, params.sensitivity_sign)?;
    let cross = p * m.transpose();
    let ui_cov = &m * &cross + e.matrix();

    let (f, g) = transition_jacobians(model, &post.mean, &u_hat, mode)?;
    let cov = match variant {
        Variant::Nui | Variant::NuiI => {
            let j = &f + &g * &m;
            &j * p * j.transpose() + &g * e.matrix() * g.transpose() + q.matrix()
        }
        Variant::NuiII => &f * p * f.transpose() + q.matrix(),
    };
    let cov = SpdMatrix::repair(cov)?;
    diag.note(&cov);
    let prior_next = GaussianBelief::new(model.transition(&post.mean, &u_hat), cov)?;

    Ok(StepOutput {
        posterior: corr.posterior,
        ui: u_hat,
        ui_cov,
        cross,
        prior_next,
        gain: corr.gain,
        innovation: corr.innovation,
        diagnostics: diag,
    })
}
