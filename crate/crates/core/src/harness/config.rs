use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::DEFAULT_TRANSIENT;
use crate::error::{Error, Result};
use crate::filters::{FilterKind, FilterParams, FilterSpec, GaussianBelief, WarmStart};
use crate::models::{JacobianMode, RigidLink, RigidLinkParams, SquareWave, SystemModel};
use crate::numerics::{Matrix, PsdMatrix, SpdMatrix, Vector};
use crate::optimize::{NlsOptions, SensitivitySign};
use crate::sigma::DEFAULT_SPREAD;

/// Schema version accepted by this build.
pub const CONFIG_VERSION: u32 = 1;

/// The bundled rigid-link reference experiment.
pub const CASE_STUDY_1: &str = include_str!("../../configs/case_study_1.config");

/// A covariance written as `{"scaled_identity": {"dim": n, "value": s}}`,
/// `{"diagonal": [..]}` or `{"full": [[..], ..]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MatrixSpec {
    ScaledIdentity { dim: usize, value: f64 },
    Diagonal(Vec<f64>),
    Full(Vec<Vec<f64>>),
}

impl MatrixSpec {
    pub fn to_matrix(&self) -> Result<Matrix> {
        match self {
            MatrixSpec::ScaledIdentity { dim, value } => Ok(Matrix::identity(*dim, *dim) * *value),
            MatrixSpec::Diagonal(d) => Ok(Matrix::from_diagonal(&Vector::from_column_slice(d))),
            MatrixSpec::Full(rows) => {
                let n = rows.len();
                if let Some(bad) = rows.iter().find(|r| r.len() != n) {
                    return Err(Error::dim("matrix row", n, bad.len()));
                }
                Ok(Matrix::from_fn(n, n, |i, j| rows[i][j]))
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            MatrixSpec::ScaledIdentity { dim, .. } => *dim,
            MatrixSpec::Diagonal(d) => d.len(),
            MatrixSpec::Full(rows) => rows.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    RigidLink(RigidLinkParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum UiModelConfig {
    /// Quasi-static torque balance solved by nonlinear least squares.
    QuasiStatic(NlsOptions),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InputConfig {
    SquareWave(SquareWave),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitConfig {
    pub mean: Vec<f64>,
    pub cov: MatrixSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum WarmStartConfig {
    Anchor(Vec<f64>),
    Previous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    pub kind: FilterKind,
    pub q: MatrixSpec,
    pub r: MatrixSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e: Option<MatrixSpec>,
    #[serde(default = "default_spread")]
    pub spread: f64,
    #[serde(default)]
    pub sensitivity_sign: SensitivitySign,
    #[serde(default)]
    pub jacobians: JacobianMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warm_start: Option<WarmStartConfig>,
}

fn default_spread() -> f64 {
    DEFAULT_SPREAD
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    #[serde(default = "default_transient")]
    pub transient: usize,
}

fn default_transient() -> usize {
    DEFAULT_TRANSIENT
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            transient: DEFAULT_TRANSIENT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundConfig {
    /// Name of the configured filter whose bound is traced.
    pub filter: FilterKind,
    /// Candidate `e` values; the filter runs with `E = e·I`.
    pub e_grid: Vec<f64>,
    pub delta_w: f64,
    pub delta_v: f64,
    /// Defaults to the per-step `e̲`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_eps: Option<f64>,
    /// Defaults to `‖x₀ − x̂₀‖²` from the configured truth and init.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_error: Option<f64>,
    #[serde(default = "default_coverage")]
    pub coverage: f64,
}

fn default_coverage() -> f64 {
    0.99
}

/// Which artifacts beyond the minimum are written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArtifactConfig {
    /// Runs (from index 0) whose per-filter step traces are exported.
    #[serde(default = "default_trace_runs")]
    pub trace_runs: usize,
    /// Include full covariance matrices in traces.
    #[serde(default)]
    pub full_matrices: bool,
}

fn default_trace_runs() -> usize {
    1
}

impl Default for ArtifactConfig {
    fn default() -> Self {
        ArtifactConfig {
            trace_runs: default_trace_runs(),
            full_matrices: false,
        }
    }
}

/// A complete Monte-Carlo experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub model: ModelConfig,
    pub ui_model: UiModelConfig,
    pub input: InputConfig,
    /// Noise covariances used to simulate the truth.
    pub q_true: MatrixSpec,
    pub r_true: MatrixSpec,
    pub x0_true: Vec<f64>,
    pub init: InitConfig,
    pub steps: usize,
    pub runs: usize,
    pub seed: u64,
    pub filters: Vec<FilterConfig>,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound: Option<BoundConfig>,
    #[serde(default)]
    pub artifacts: ArtifactConfig,
    /// Default output directory; the CLI `--out` flag takes precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
}

fn invalid(path: impl Into<String>, reason: impl ToString) -> Error {
    Error::ConfigInvalid {
        path: path.into(),
        reason: reason.to_string(),
    }
}

impl ExperimentConfig {
    /// Parses and validates a JSON config, reporting the offending path.
    pub fn from_json(text: &str) -> Result<Self> {
        let mut de = serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(&mut de).map_err(|e| {
            let path = e.path().to_string();
            invalid(path, e.into_inner())
        })?;
        de.end().map_err(|e| invalid("$", e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn case_study_1() -> Self {
        Self::from_json(CASE_STUDY_1).expect("bundled config is valid")
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| invalid("$", e))
    }

    /// SHA-256 of the canonical JSON form, ignoring `output_dir`.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = None;
        let bytes = serde_json::to_vec(&canonical).expect("config serialises");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn rigid_link(&self) -> RigidLinkParams {
        match &self.model {
            ModelConfig::RigidLink(p) => *p,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(invalid(
                "version",
                format!("unsupported version {}, expected {CONFIG_VERSION}", self.version),
            ));
        }
        let ModelConfig::RigidLink(p) = &self.model;
        p.validate().map_err(|e| invalid("model.rigid_link", e))?;
        let UiModelConfig::QuasiStatic(opts) = &self.ui_model;
        opts.validate().map_err(|e| invalid("ui_model.quasi_static", e))?;
        let InputConfig::SquareWave(w) = &self.input;
        if ![w.amplitude, w.angular_frequency, w.sample_period].iter().all(|v| v.is_finite())
            || w.sample_period <= 0.0
        {
            return Err(invalid("input.square_wave", "parameters must be finite with sample_period > 0"));
        }
        let model = RigidLink { params: *p };
        let (n, d, m) = (model.state_dim(), model.input_dim(), model.output_dim());
        spd(&self.q_true, n, "q_true")?;
        spd(&self.r_true, m, "r_true")?;
        vector(&self.x0_true, n, "x0_true")?;
        vector(&self.init.mean, n, "init.mean")?;
        spd(&self.init.cov, n, "init.cov")?;
        if self.steps == 0 {
            return Err(invalid("steps", "must be at least 1"));
        }
        if self.runs == 0 {
            return Err(invalid("runs", "must be at least 1"));
        }
        if self.filters.is_empty() {
            return Err(invalid("filters", "at least one filter is required"));
        }
        for (i, f) in self.filters.iter().enumerate() {
            let at = |field: &str| format!("filters[{i}].{field}");
            if self.filters[..i].iter().any(|g| g.kind == f.kind) {
                return Err(invalid(at("kind"), format!("{} is listed twice", f.kind)));
            }
            spd(&f.q, n, &at("q"))?;
            spd(&f.r, m, &at("r"))?;
            match (&f.e, f.kind.uses_ui_model()) {
                (Some(e), _) => psd(e, d, &at("e")).map(drop)?,
                (None, true) => return Err(invalid(at("e"), format!("{} requires E", f.kind))),
                (None, false) => {}
            }
            if !(f.spread.is_finite() && f.spread >= 0.0) {
                return Err(invalid(at("spread"), "must be finite and >= 0"));
            }
            if let Some(WarmStartConfig::Anchor(a)) = &f.warm_start {
                vector(a, d, &at("warm_start.anchor"))?;
            }
        }
        if self.metrics.transient >= self.steps {
            return Err(invalid("metrics.transient", "must be smaller than steps"));
        }
        if let Some(b) = &self.bound {
            let f = self
                .filters
                .iter()
                .find(|f| f.kind == b.filter)
                .ok_or_else(|| invalid("bound.filter", format!("{} is not a configured filter", b.filter)))?;
            if !f.kind.uses_ui_model() {
                return Err(invalid("bound.filter", "the bound needs a filter with a UI model"));
            }
            if b.e_grid.is_empty() || b.e_grid.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
                return Err(invalid("bound.e_grid", "needs finite values >= 0"));
            }
            let nonneg = |v: f64| v.is_finite() && v >= 0.0;
            if !nonneg(b.delta_w) || !nonneg(b.delta_v) || !b.delta_eps.is_none_or(nonneg) {
                return Err(invalid("bound", "noise bounds must be finite and >= 0"));
            }
            if !b.initial_error.is_none_or(nonneg) {
                return Err(invalid("bound.initial_error", "must be finite and >= 0"));
            }
            if !(b.coverage > 0.0 && b.coverage <= 1.0) {
                return Err(invalid("bound.coverage", "must lie in (0, 1]"));
            }
        }
        Ok(())
    }

    pub fn init_belief(&self) -> Result<GaussianBelief> {
        GaussianBelief::new(
            Vector::from_column_slice(&self.init.mean),
            spd(&self.init.cov, self.init.mean.len(), "init.cov")?,
        )
    }

    pub fn filter_spec(&self, f: &FilterConfig) -> Result<FilterSpec> {
        Ok(FilterSpec {
            kind: f.kind,
            params: self.filter_params(f)?,
        })
    }

    fn filter_params(&self, f: &FilterConfig) -> Result<FilterParams> {
        let q = spd(&f.q, f.q.dim(), "q")?;
        let r = spd(&f.r, f.r.dim(), "r")?;
        let e = f.e.as_ref().map(|e| psd(e, e.dim(), "e")).transpose()?;
        let mut params = FilterParams::new(q.into(), r.into(), e.map(Into::into));
        params.spread = f.spread;
        params.sensitivity_sign = f.sensitivity_sign;
        params.jacobians = f.jacobians;
        if let Some(w) = &f.warm_start {
            params.warm_start = match w {
                WarmStartConfig::Anchor(a) => WarmStart::Anchor(Vector::from_column_slice(a)),
                WarmStartConfig::Previous => WarmStart::Previous,
            };
        }
        Ok(params)
    }
}

fn vector(v: &[f64], dim: usize, path: &str) -> Result<()> {
    if v.len() != dim {
        return Err(invalid(path, format!("expected {dim} entries, found {}", v.len())));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(invalid(path, "entries must be finite"));
    }
    Ok(())
}

pub(crate) fn spd(spec: &MatrixSpec, dim: usize, path: &str) -> Result<SpdMatrix> {
    if spec.dim() != dim {
        return Err(invalid(path, format!("expected a {dim}x{dim} matrix, found {}", spec.dim())));
    }
    spec.to_matrix().and_then(SpdMatrix::new).map_err(|e| invalid(path, e))
}

pub(crate) fn psd(spec: &MatrixSpec, dim: usize, path: &str) -> Result<PsdMatrix> {
    if spec.dim() != dim {
        return Err(invalid(path, format!("expected a {dim}x{dim} matrix, found {}", spec.dim())));
    }
    spec.to_matrix().and_then(PsdMatrix::new).map_err(|e| invalid(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_config_parses_and_round_trips() {
        let cfg = ExperimentConfig::case_study_1();
        assert_eq!(cfg.runs, 50);
        assert_eq!(cfg.filters.len(), 12);
        let back = ExperimentConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn unknown_key_reports_path() {
        let text = CASE_STUDY_1.replacen("\"steps\"", "\"stpes\"", 1);
        match ExperimentConfig::from_json(&text) {
            Err(Error::ConfigInvalid { reason, .. }) => assert!(reason.contains("stpes"), "{reason}"),
            other => panic!("unexpected {other:?}"),
        }
        let text = CASE_STUDY_1.replacen("\"mass\"", "\"mas\"", 1);
        match ExperimentConfig::from_json(&text) {
            Err(Error::ConfigInvalid { path, .. }) => assert!(path.starts_with("model.rigid_link"), "{path}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn semantic_errors_name_the_field() {
        let mut cfg = ExperimentConfig::case_study_1();
        cfg.runs = 0;
        assert!(matches!(cfg.validate(), Err(Error::ConfigInvalid { path, .. }) if path == "runs"));
        let mut cfg = ExperimentConfig::case_study_1();
        cfg.filters[0].q = MatrixSpec::Diagonal(vec![1.0, -1.0]);
        assert!(matches!(cfg.validate(), Err(Error::ConfigInvalid { path, .. }) if path == "filters[0].q"));
        let mut cfg = ExperimentConfig::case_study_1();
        cfg.filters[0].e = None;
        assert!(matches!(cfg.validate(), Err(Error::ConfigInvalid { path, .. }) if path == "filters[0].e"));
    }

    #[test]
    fn hash_ignores_output_dir_only() {
        let cfg = ExperimentConfig::case_study_1();
        let mut other = cfg.clone();
        other.output_dir = Some("elsewhere".into());
        assert_eq!(cfg.hash(), other.hash());
        other.seed += 1;
        assert_ne!(cfg.hash(), other.hash());
    }

    #[test]
    fn matrix_specs() {
        let m = MatrixSpec::Full(vec![vec![2.0, 0.5], vec![0.5, 1.0]]).to_matrix().unwrap();
        assert_eq!(m[(0, 1)], 0.5);
        assert!(MatrixSpec::Full(vec![vec![1.0], vec![0.0, 1.0]]).to_matrix().is_err());
        assert!(psd(&MatrixSpec::ScaledIdentity { dim: 2, value: 0.0 }, 2, "e").is_ok());
        assert!(spd(&MatrixSpec::ScaledIdentity { dim: 2, value: 0.0 }, 2, "q").is_err());
    }
}
