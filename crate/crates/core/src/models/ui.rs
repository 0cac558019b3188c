use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Vector};
use crate::optimize::{solve_nls, NlsOptions, NlsReport, NlsStatus};

/// Residual `Φ(x, u)` whose least-squares minimiser over `u` is the UI estimate.
pub trait UiResidual: Send + Sync {
    fn input_dim(&self) -> usize;
    fn residual_dim(&self) -> usize;
    fn eval(&self, x: &Vector, u: &Vector) -> Vector;

    /// `(∂Φ/∂x, ∂Φ/∂u)` if known in closed form.
    fn jacobians(&self, _x: &Vector, _u: &Vector) -> Option<(Matrix, Matrix)> {
        None
    }
}

/// Direct map `u = φ(x)`, e.g. a learned model.
pub trait DirectUiModel: Send + Sync {
    fn input_dim(&self) -> usize;
    fn eval(&self, x: &Vector) -> Vector;

    /// `∂φ/∂x` if known in closed form.
    fn jacobian(&self, _x: &Vector) -> Option<Matrix> {
        None
    }
}

type ResidualFn = dyn Fn(&Vector, &Vector) -> Vector + Send + Sync;
type DirectFn = dyn Fn(&Vector) -> Vector + Send + Sync;

/// Closure-backed residual without analytic derivatives.
#[derive(Clone)]
pub struct FnResidual {
    input_dim: usize,
    residual_dim: usize,
    f: Arc<ResidualFn>,
}

impl FnResidual {
    pub fn new<F>(input_dim: usize, residual_dim: usize, f: F) -> Self
    where
        F: Fn(&Vector, &Vector) -> Vector + Send + Sync + 'static,
    {
        FnResidual {
            input_dim,
            residual_dim,
            f: Arc::new(f),
        }
    }
}

impl UiResidual for FnResidual {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn residual_dim(&self) -> usize {
        self.residual_dim
    }

    fn eval(&self, x: &Vector, u: &Vector) -> Vector {
        (self.f)(x, u)
    }
}

/// Closure-backed direct UI model.
#[derive(Clone)]
pub struct FnDirectUi {
    input_dim: usize,
    f: Arc<DirectFn>,
    jacobian: Option<Matrix>,
}

impl FnDirectUi {
    pub fn new<F>(input_dim: usize, f: F) -> Self
    where
        F: Fn(&Vector) -> Vector + Send + Sync + 'static,
    {
        FnDirectUi {
            input_dim,
            f: Arc::new(f),
            jacobian: None,
        }
    }

    /// Linear model `φ(x) = M·x` with its exact Jacobian registered.
    pub fn linear(m: Matrix) -> Self {
        let jac = m.clone();
        FnDirectUi {
            input_dim: m.nrows(),
            f: Arc::new(move |x| &m * x),
            jacobian: Some(jac),
        }
    }
}

impl DirectUiModel for FnDirectUi {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn eval(&self, x: &Vector) -> Vector {
        (self.f)(x)
    }

    fn jacobian(&self, _x: &Vector) -> Option<Matrix> {
        self.jacobian.clone()
    }
}

/// Either a residual to minimise or a direct map.
#[derive(Clone)]
pub enum UiEstimator {
    Residual {
        residual: Arc<dyn UiResidual>,
        options: NlsOptions,
    },
    Direct(Arc<dyn DirectUiModel>),
}

impl fmt::Debug for UiEstimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UiEstimator::Residual { options, residual } => f
                .debug_struct("Residual")
                .field("input_dim", &residual.input_dim())
                .field("residual_dim", &residual.residual_dim())
                .field("options", options)
                .finish(),
            UiEstimator::Direct(m) => f
                .debug_struct("Direct")
                .field("input_dim", &m.input_dim())
                .finish(),
        }
    }
}

impl UiEstimator {
    pub fn input_dim(&self) -> usize {
        match self {
            UiEstimator::Residual { residual, .. } => residual.input_dim(),
            UiEstimator::Direct(m) => m.input_dim(),
        }
    }

    /// UI estimate at `x`. `warm_start` seeds the residual solver and is
    /// ignored by direct models.
    pub fn estimate(&self, x: &Vector, warm_start: &Vector) -> Result<NlsReport> {
        match self {
            UiEstimator::Residual { residual, options } => {
                solve_nls(residual.as_ref(), x, warm_start, options)
            }
            UiEstimator::Direct(m) => {
                let u = m.eval(x);
                if u.len() != m.input_dim() {
                    return Err(Error::dim("direct UI output", m.input_dim(), u.len()));
                }
                if u.iter().any(|v| !v.is_finite()) {
                    return Err(Error::non_finite("direct UI model"));
                }
                Ok(NlsReport {
                    solution: u,
                    iterations: 0,
                    objective: 0.0,
                    gradient_norm: 0.0,
                    status: NlsStatus::Converged,
                })
            }
        }
    }
}

/// Wraps a closure as a direct UI estimator.
pub fn synthetic_direct_ui<F>(input_dim: usize, model_fn: F) -> UiEstimator
where
    F: Fn(&Vector) -> Vector + Send + Sync + 'static,
{
    UiEstimator::Direct(Arc::new(FnDirectUi::new(input_dim, model_fn)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{quasi_static_residual, RigidLinkParams};
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn zero_direct_model() {
        let est = synthetic_direct_ui(2, |_| Vector::zeros(2));
        let r = est.estimate(&Vector::from_column_slice(&[3.0, 1.0]), &Vector::zeros(2)).unwrap();
        assert_eq!(r.solution, Vector::zeros(2));
    }

    #[test]
    fn direct_model_agrees_with_optimizer_at_upright() {
        let p = RigidLinkParams::default();
        let direct = synthetic_direct_ui(2, move |x| Vector::from_column_slice(&[p.damping * x[0], 0.0]));
        let solver = quasi_static_residual(p, NlsOptions::default());
        for x1 in [-1.5, 0.0, 0.7, 2.0] {
            let x = Vector::from_column_slice(&[x1, FRAC_PI_2]);
            let a = direct.estimate(&x, &Vector::zeros(2)).unwrap().solution;
            let b = solver.estimate(&x, &Vector::zeros(2)).unwrap().solution;
            assert_relative_eq!(a, b, epsilon = 1e-8);
        }
    }

    #[test]
    fn direct_output_dimension_is_checked() {
        let est = synthetic_direct_ui(2, |_| Vector::zeros(3));
        assert!(est.estimate(&Vector::zeros(2), &Vector::zeros(2)).is_err());
    }
}
