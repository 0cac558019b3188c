use super::{joint_covariance, stack, FilterParams, GaussianBelief, StepDiagnostics, StepOutput, Variant};
use crate::error::{Error, Result};
use crate::models::{SystemModel, UiEstimator};
use crate::numerics::{Matrix, SpdMatrix, Vector};
use crate::sigma::{cross_cov, generate, moments, reconstruct_points, SigmaEnsemble};

/// Result of a sigma-point measurement update.
pub(crate) struct SpkfCorrection {
    pub posterior: GaussianBelief,
    pub gain: Matrix,
    pub innovation: Vector,
    pub ensemble: SigmaEnsemble,
}

pub(crate) fn spkf_correct(
    prior: &GaussianBelief,
    y: &Vector,
    model: &dyn SystemModel,
    r: &SpdMatrix,
    spread: f64,
    diag: &mut StepDiagnostics,
) -> Result<SpkfCorrection> {
    let ensemble = generate(&prior.mean, &prior.cov, spread)?;
    let ys = ensemble.map(|x| model.observe(x));
    let (y_hat, pyy0) = moments(&ensemble, &ys)?;
    if pyy0.nrows() != r.dim() {
        return Err(Error::dim("measurement noise", pyy0.nrows(), r.dim()));
    }
    let pyy = SpdMatrix::repair(pyy0 + r.matrix())?;
    diag.note(&pyy);
    let pxy = cross_cov(&ensemble, &ys)?;
    let gain = pyy.solve(&pxy.transpose()).transpose();
    let innovation = y - y_hat;
    let mean = &prior.mean + &gain * &innovation;
    let cov = SpdMatrix::repair(prior.cov.matrix() - &gain * pyy.matrix() * gain.transpose())?;
    diag.note(&cov);
    Ok(SpkfCorrection {
        posterior: GaussianBelief::new(mean, cov)?,
        gain,
        innovation,
        ensemble,
    })
}

/// Unscented prediction over the state only, with a fixed input.
pub(crate) fn spkf_predict(
    belief: &GaussianBelief,
    u: &Vector,
    model: &dyn SystemModel,
    q: &SpdMatrix,
    spread: f64,
    diag: &mut StepDiagnostics,
) -> Result<GaussianBelief> {
    let ens = generate(&belief.mean, &belief.cov, spread)?;
    let xs = ens.map(|x| model.transition(x, u));
    let next = reconstruct_points(&ens, &xs, Some(q))?;
    diag.note(&next.cov);
    Ok(next)
}

/// Per-point UI solves over `ens`: the centre point starts from `warm`, every
/// other point from the centre solution.
pub(crate) fn ui_over_ensemble(
    ens: &SigmaEnsemble,
    est: &UiEstimator,
    warm: &Vector,
    diag: &mut StepDiagnostics,
) -> Result<Vec<Vector>> {
    let points = ens.points();
    let center = est.estimate(&points[0], warm)?;
    diag.ui_solves += 1;
    diag.solver_warnings += usize::from(center.warning());
    let mut us = Vec::with_capacity(points.len());
    us.push(center.solution.clone());
    for p in &points[1..] {
        let r = est.estimate(p, &center.solution)?;
        diag.ui_solves += 1;
        diag.solver_warnings += usize::from(r.warning());
        us.push(r.solution);
    }
    Ok(us)
}

/// One SPKF-nUI step: correction, UI estimation, and prediction.
#[allow(clippy::too_many_arguments)]
pub fn spkf_nui_step(
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
    let a = params.spread;
    let e = params.e_at(t)?;
    let q = params.q.at(t);
    let n = model.state_dim();

    let corr = spkf_correct(prior, y, model, params.r.at(t), a, &mut diag)?;
    let post = &corr.posterior;

    let ui_ens = match variant {
        Variant::NuiI => corr.ensemble.clone(),
        Variant::Nui | Variant::NuiII => generate(&post.mean, &post.cov, a)?,
    };
    let us = ui_over_ensemble(&ui_ens, est, warm, &mut diag)?;
    let (u_hat, puu0) = moments(&ui_ens, &us)?;
    if puu0.nrows() != e.dim() {
        return Err(Error::dim("UI covariance", e.dim(), puu0.nrows()));
    }
    let ui_cov = puu0 + e.matrix();
    let cross = cross_cov(&ui_ens, &us)?;

    let prior_next = match variant {
        Variant::Nui | Variant::NuiI => {
            let joint = SpdMatrix::repair(joint_covariance(post.cov.matrix(), &cross, &ui_cov))?;
            diag.note(&joint);
            let ens = generate(&stack(&post.mean, &u_hat), &joint, a)?;
            let d = u_hat.len();
            let xs = ens.map(|z| {
                let x = z.rows(0, n).into_owned();
                let u = z.rows(n, d).into_owned();
                model.transition(&x, &u)
            });
            let next = reconstruct_points(&ens, &xs, Some(q))?;
            diag.note(&next.cov);
            next
        }
        Variant::NuiII => spkf_predict(post, &u_hat, model, q, a, &mut diag)?,
    };

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
