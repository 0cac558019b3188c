//! SPKF-nUI, its variants, the EKF-nUI family and the two-stage baselines,
//! all behind one step interface.

mod baseline;
mod ekf;
mod spkf;
mod trace;

pub use baseline::baseline_step;
pub use ekf::ekf_nui_step;
pub use spkf::spkf_nui_step;
pub use trace::{read_trace_csv, read_trace_json, trace_rows, write_trace_csv, write_trace_json, TraceRow};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{jacobian_source, JacobianMode, JacobianSource, SystemModel, Trajectory, UiEstimator};
use crate::numerics::{Covariance, Matrix, PsdMatrix, SpdMatrix, Vector};
use crate::optimize::SensitivitySign;
use crate::sigma::DEFAULT_SPREAD;

/// Mean and SPD covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    pub mean: Vector,
    pub cov: SpdMatrix,
}

impl GaussianBelief {
    pub fn new(mean: Vector, cov: SpdMatrix) -> Result<Self> {
        if mean.len() != cov.dim() {
            return Err(Error::dim("belief mean", cov.dim(), mean.len()));
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::non_finite("belief mean"));
        }
        Ok(GaussianBelief { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Covariance that is either constant or given per step (the last entry is
/// reused beyond the end of the list).
#[derive(Debug, Clone, PartialEq)]
pub enum Schedule<C> {
    Constant(C),
    PerStep(Vec<C>),
}

/// Schedule of positive-definite noise covariances (`Q`, `R`).
pub type CovSchedule = Schedule<SpdMatrix>;
/// Schedule of UI covariances (`E`), which may be singular.
pub type UiCovSchedule = Schedule<PsdMatrix>;

impl<C: Covariance> Schedule<C> {
    pub fn at(&self, t: usize) -> &C {
        match self {
            Schedule::Constant(m) => m,
            Schedule::PerStep(ms) => &ms[t.min(ms.len() - 1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.at(0).dim()
    }

    fn validate(&self, what: &str, dim: usize) -> Result<()> {
        if let Schedule::PerStep(ms) = self {
            if ms.is_empty() {
                return Err(Error::InvalidArgument(format!("{what} schedule is empty")));
            }
            if let Some(m) = ms.iter().find(|m| m.dim() != dim) {
                return Err(Error::dim(what, dim, m.dim()));
            }
        } else if self.dim() != dim {
            return Err(Error::dim(what, dim, self.dim()));
        }
        Ok(())
    }
}

impl From<SpdMatrix> for CovSchedule {
    fn from(m: SpdMatrix) -> Self {
        Schedule::Constant(m)
    }
}

impl From<PsdMatrix> for UiCovSchedule {
    fn from(m: PsdMatrix) -> Self {
        Schedule::Constant(m)
    }
}

impl From<SpdMatrix> for UiCovSchedule {
    fn from(m: SpdMatrix) -> Self {
        Schedule::Constant(m.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Spkf,
    Ekf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// UI from posterior sigma points, joint state–UI prediction.
    Nui,
    /// UI from the prior sigma points.
    NuiI,
    /// Conventional prediction with the point estimate `û`.
    NuiII,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    SpkfUi,
    SpkfMvu,
    EkfUi,
    EkfMvu,
    SpkfPlain,
    EkfPlain,
}

impl BaselineKind {
    pub fn family(self) -> Family {
        match self {
            BaselineKind::SpkfUi | BaselineKind::SpkfMvu | BaselineKind::SpkfPlain => Family::Spkf,
            _ => Family::Ekf,
        }
    }

    pub fn estimates_ui(self) -> bool {
        !matches!(self, BaselineKind::SpkfPlain | BaselineKind::EkfPlain)
    }
}

/// Which recursion a filter runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FilterKind {
    Nui { family: Family, variant: Variant },
    Baseline(BaselineKind),
}

impl FilterKind {
    pub const ALL: [FilterKind; 12] = [
        FilterKind::Nui { family: Family::Spkf, variant: Variant::Nui },
        FilterKind::Nui { family: Family::Ekf, variant: Variant::Nui },
        FilterKind::Nui { family: Family::Spkf, variant: Variant::NuiI },
        FilterKind::Nui { family: Family::Ekf, variant: Variant::NuiI },
        FilterKind::Nui { family: Family::Spkf, variant: Variant::NuiII },
        FilterKind::Nui { family: Family::Ekf, variant: Variant::NuiII },
        FilterKind::Baseline(BaselineKind::SpkfUi),
        FilterKind::Baseline(BaselineKind::EkfUi),
        FilterKind::Baseline(BaselineKind::SpkfMvu),
        FilterKind::Baseline(BaselineKind::EkfMvu),
        FilterKind::Baseline(BaselineKind::SpkfPlain),
        FilterKind::Baseline(BaselineKind::EkfPlain),
    ];

    pub fn name(self) -> &'static str {
        use BaselineKind::*;
        use Family::*;
        use Variant::*;
        match self {
            FilterKind::Nui { family: Spkf, variant: Nui } => "SPKF-nUI",
            FilterKind::Nui { family: Ekf, variant: Nui } => "EKF-nUI",
            FilterKind::Nui { family: Spkf, variant: NuiI } => "SPKF-nUI-I",
            FilterKind::Nui { family: Ekf, variant: NuiI } => "EKF-nUI-I",
            FilterKind::Nui { family: Spkf, variant: NuiII } => "SPKF-nUI-II",
            FilterKind::Nui { family: Ekf, variant: NuiII } => "EKF-nUI-II",
            FilterKind::Baseline(SpkfUi) => "SPKF-UI",
            FilterKind::Baseline(EkfUi) => "EKF-UI",
            FilterKind::Baseline(SpkfMvu) => "SPKF-MVU",
            FilterKind::Baseline(EkfMvu) => "EKF-MVU",
            FilterKind::Baseline(SpkfPlain) => "SPKF",
            FilterKind::Baseline(EkfPlain) => "EKF",
        }
    }

    pub fn family(self) -> Family {
        match self {
            FilterKind::Nui { family, .. } => family,
            FilterKind::Baseline(b) => b.family(),
        }
    }

    /// Whether the filter needs a UI estimator and an `E` schedule.
    pub fn uses_ui_model(self) -> bool {
        matches!(self, FilterKind::Nui { .. })
    }

    /// Whether the filter produces a UI estimate at all.
    pub fn estimates_ui(self) -> bool {
        match self {
            FilterKind::Nui { .. } => true,
            FilterKind::Baseline(b) => b.estimates_ui(),
        }
    }

    /// Steps by which the emitted UI lags the step's measurement: the
    /// innovation-based baselines recover `u_{t−1}` from `y_t`.
    pub fn ui_delay(self) -> usize {
        match self {
            FilterKind::Baseline(b) if b.estimates_ui() => 1,
            _ => 0,
        }
    }
}

impl fmt::Display for FilterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FilterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FilterKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown filter kind `{s}`")))
    }
}

impl Serialize for FilterKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for FilterKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(|_| {
            let names: Vec<&str> = FilterKind::ALL.iter().map(|k| k.name()).collect();
            serde::de::Error::custom(format!("unknown filter kind `{s}`, expected one of {}", names.join(", ")))
        })
    }
}

/// Warm start of the centre-point UI solve.
#[derive(Debug, Clone, PartialEq)]
pub enum WarmStart {
    /// Always start from this fixed point.
    Anchor(Vector),
    /// Start from the previous step's `û`.
    Previous,
}

/// Filter tuning shared by every kind.
#[derive(Debug, Clone)]
pub struct FilterParams {
    pub q: CovSchedule,
    pub r: CovSchedule,
    /// UI uncertainty; required by the nUI kinds, ignored by baselines.
    pub e: Option<UiCovSchedule>,
    /// Sigma-point spread `a`.
    pub spread: f64,
    pub sensitivity_sign: SensitivitySign,
    pub jacobians: JacobianMode,
    pub warm_start: WarmStart,
}

impl FilterParams {
    /// Defaults: `a = 1`, verbatim sensitivity, analytic Jacobians when
    /// registered, zero-anchored warm start.
    pub fn new(q: CovSchedule, r: CovSchedule, e: Option<UiCovSchedule>) -> Self {
        let d = e.as_ref().map_or(0, |e| e.dim());
        FilterParams {
            q,
            r,
            e,
            spread: DEFAULT_SPREAD,
            sensitivity_sign: SensitivitySign::Verbatim,
            jacobians: JacobianMode::Auto,
            warm_start: WarmStart::Anchor(Vector::zeros(d)),
        }
    }

    pub(crate) fn e_at(&self, t: usize) -> Result<&PsdMatrix> {
        self.e
            .as_ref()
            .map(|e| e.at(t))
            .ok_or_else(|| Error::InvalidArgument("UI covariance E is required".into()))
    }

    pub(crate) fn center_warm_start(&self, previous: &Vector) -> Vector {
        match &self.warm_start {
            WarmStart::Anchor(v) if v.len() == previous.len() => v.clone(),
            WarmStart::Anchor(_) => Vector::zeros(previous.len()),
            WarmStart::Previous => previous.clone(),
        }
    }

    fn validate(&self, kind: FilterKind, model: &dyn SystemModel, ui: Option<&UiEstimator>) -> Result<()> {
        let (n, d, m) = (model.state_dim(), model.input_dim(), model.output_dim());
        self.q.validate("Q", n)?;
        self.r.validate("R", m)?;
        if !(self.spread >= 0.0) || !self.spread.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "spread must be finite and >= 0, got {}",
                self.spread
            )));
        }
        if let WarmStart::Anchor(v) = &self.warm_start {
            if v.len() != d && !v.is_empty() {
                return Err(Error::dim("warm-start anchor", d, v.len()));
            }
        }
        if kind.uses_ui_model() {
            let e = self
                .e
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument(format!("{kind} requires E")))?;
            e.validate("E", d)?;
            let est = ui.ok_or_else(|| Error::InvalidArgument(format!("{kind} requires a UI estimator")))?;
            if est.input_dim() != d {
                return Err(Error::dim("UI estimator output", d, est.input_dim()));
            }
        }
        Ok(())
    }
}

/// Per-step bookkeeping that is not part of the estimate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    /// UI solves performed.
    pub ui_solves: usize,
    /// UI solves whose line search failed (best iterate used).
    pub solver_warnings: usize,
    /// Covariances that needed diagonal jitter to factorise.
    pub jitter_repairs: usize,
    /// The baseline least-squares problem was singular; previous UI reused.
    pub singular_least_squares: bool,
}

impl StepDiagnostics {
    pub(crate) fn note(&mut self, m: &SpdMatrix) {
        if m.jitter() > 0.0 {
            self.jitter_repairs += 1;
        }
    }

    pub fn accumulate(&mut self, other: &StepDiagnostics) {
        self.ui_solves += other.ui_solves;
        self.solver_warnings += other.solver_warnings;
        self.jitter_repairs += other.jitter_repairs;
        self.singular_least_squares |= other.singular_least_squares;
    }
}

/// Everything one step emits.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    /// `(x̂_t, P_t)`.
    pub posterior: GaussianBelief,
    /// `û` as emitted by this step (see [`FilterKind::ui_delay`]).
    pub ui: Vector,
    /// `P̂ᵘᵘ`; symmetric positive semidefinite (zero for plain filters).
    pub ui_cov: Matrix,
    /// `P̂ˣᵘ`.
    pub cross: Matrix,
    /// `(x̂⁻_{t+1}, P⁻_{t+1})`.
    pub prior_next: GaussianBelief,
    pub gain: Matrix,
    pub innovation: Vector,
    pub diagnostics: StepDiagnostics,
}

/// A filter kind bound to its model, UI estimator and parameters.
#[derive(Debug, Clone)]
pub struct FilterSpec {
    pub kind: FilterKind,
    pub params: FilterParams,
}

/// Single-owner filter state.
pub struct Filter<'a> {
    kind: FilterKind,
    model: &'a dyn SystemModel,
    ui: Option<&'a UiEstimator>,
    params: &'a FilterParams,
    prior: GaussianBelief,
    previous_posterior: Option<GaussianBelief>,
    last_ui: Vector,
    t: usize,
}

impl<'a> Filter<'a> {
    pub fn new(
        spec: &'a FilterSpec,
        model: &'a dyn SystemModel,
        ui: Option<&'a UiEstimator>,
        init: GaussianBelief,
    ) -> Result<Self> {
        spec.params.validate(spec.kind, model, ui)?;
        if init.dim() != model.state_dim() {
            return Err(Error::dim("initial belief", model.state_dim(), init.dim()));
        }
        Ok(Filter {
            kind: spec.kind,
            model,
            ui,
            params: &spec.params,
            prior: init,
            previous_posterior: None,
            last_ui: Vector::zeros(model.input_dim()),
            t: 0,
        })
    }

    pub fn kind(&self) -> FilterKind {
        self.kind
    }

    pub fn prior(&self) -> &GaussianBelief {
        &self.prior
    }

    /// Consumes `y_t` and advances to `t + 1`.
    pub fn step(&mut self, y: &Vector) -> Result<StepOutput> {
        let t = self.t;
        if y.len() != self.model.output_dim() {
            return Err(Error::dim("measurement", self.model.output_dim(), y.len()).at_step(t));
        }
        let out = match self.kind {
            FilterKind::Nui { family, variant } => {
                let est = self.ui.expect("validated at construction");
                let warm = self.params.center_warm_start(&self.last_ui);
                match family {
                    Family::Spkf => spkf_nui_step(&self.prior, y, t, self.model, est, self.params, variant, &warm),
                    Family::Ekf => ekf_nui_step(&self.prior, y, t, self.model, est, self.params, variant, &warm),
                }
            }
            FilterKind::Baseline(kind) => baseline_step(
                kind,
                &self.prior,
                self.previous_posterior.as_ref(),
                y,
                t,
                self.model,
                self.params,
                &self.last_ui,
            ),
        }
        .map_err(|e| e.at_step(t))?;
        self.prior = out.prior_next.clone();
        self.previous_posterior = Some(out.posterior.clone());
        self.last_ui = out.ui.clone();
        self.t += 1;
        Ok(out)
    }
}

/// Output of [`run_filter`].
#[derive(Debug, Clone, PartialEq)]
pub struct FilterRun {
    pub kind: FilterKind,
    pub init: GaussianBelief,
    pub outputs: Vec<StepOutput>,
    pub jacobian_source: JacobianSource,
}

impl FilterRun {
    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    /// Posterior means `x̂_t`.
    pub fn state_estimates(&self) -> Vec<Vector> {
        self.outputs.iter().map(|o| o.posterior.mean.clone()).collect()
    }

    /// UI estimates aligned so entry `t` estimates `u_t`. For lagged kinds the
    /// final input is never observed and repeats the last available estimate.
    pub fn ui_estimates(&self) -> Vec<Vector> {
        let delay = self.kind.ui_delay();
        let len = self.outputs.len();
        (0..len)
            .map(|t| self.outputs[(t + delay).min(len - 1)].ui.clone())
            .collect()
    }

    /// Prior used at step `t`.
    pub fn prior_at(&self, t: usize) -> &GaussianBelief {
        if t == 0 {
            &self.init
        } else {
            &self.outputs[t - 1].prior_next
        }
    }

    pub fn diagnostics(&self) -> StepDiagnostics {
        let mut total = StepDiagnostics::default();
        for o in &self.outputs {
            total.accumulate(&o.diagnostics);
        }
        total
    }
}

/// Runs a filter over every measurement in `trajectory`.
pub fn run_filter(
    spec: &FilterSpec,
    model: &dyn SystemModel,
    ui: Option<&UiEstimator>,
    trajectory: &Trajectory,
    init: &GaussianBelief,
) -> Result<FilterRun> {
    if trajectory.output_dim() != model.output_dim() {
        return Err(Error::dim("trajectory measurements", model.output_dim(), trajectory.output_dim()));
    }
    let mut filter = Filter::new(spec, model, ui, init.clone())?;
    let outputs = trajectory
        .records()
        .iter()
        .map(|r| filter.step(&r.y))
        .collect::<Result<Vec<_>>>()?;
    Ok(FilterRun {
        kind: spec.kind,
        init: init.clone(),
        outputs,
        jacobian_source: jacobian_source(model, spec.params.jacobians),
    })
}

/// Assembles `[[P, Pˣᵘ], [Pˣᵘᵀ, Pᵘᵘ]]`.
pub(crate) fn joint_covariance(p: &Matrix, pxu: &Matrix, puu: &Matrix) -> Matrix {
    let (n, d) = pxu.shape();
    let mut j = Matrix::zeros(n + d, n + d);
    j.view_mut((0, 0), (n, n)).copy_from(p);
    j.view_mut((0, n), (n, d)).copy_from(pxu);
    j.view_mut((n, 0), (d, n)).copy_from(&pxu.transpose());
    j.view_mut((n, n), (d, d)).copy_from(puu);
    j
}

pub(crate) fn stack(a: &Vector, b: &Vector) -> Vector {
    Vector::from_iterator(a.len() + b.len(), a.iter().chain(b.iter()).copied())
}
