//! System and unknown-input models, the rigid-link robot, and trajectory simulation.

mod rigid_link;
mod trajectory;
mod ui;

pub use rigid_link::{
    quasi_static_residual, rigid_link_eom, rigid_link_f, rigid_link_h, square_wave_ui, QuasiStatic,
    RigidLink, RigidLinkParams, SquareWave,
};
pub use trajectory::{simulate, Trajectory, TrajectoryRecord};
pub use ui::{
    synthetic_direct_ui, DirectUiModel, FnDirectUi, FnResidual, UiEstimator, UiResidual,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{finite_diff_jacobian, Matrix, Vector, DEFAULT_FD_STEP};

/// A discrete-time system `x' = f(x, u)`, `y = h(x)`.
///
/// Analytic Jacobians are optional; when absent the filters fall back to
/// central finite differences.
pub trait SystemModel: Send + Sync {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;

    fn transition(&self, x: &Vector, u: &Vector) -> Vector;
    fn observe(&self, x: &Vector) -> Vector;

    /// `(∂f/∂x, ∂f/∂u)` at `(x, u)`.
    fn transition_jacobians(&self, _x: &Vector, _u: &Vector) -> Option<(Matrix, Matrix)> {
        None
    }

    /// `∂h/∂x` at `x`.
    fn observation_jacobian(&self, _x: &Vector) -> Option<Matrix> {
        None
    }
}

/// Where a Jacobian came from; recorded in run metadata.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JacobianSource {
    Analytic,
    FiniteDifference,
}

/// Jacobian evaluation policy for a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JacobianMode {
    /// Analytic when the model registers one, finite differences otherwise.
    #[default]
    Auto,
    FiniteDifference,
}

/// Resolves which Jacobian source `mode` selects for `model`.
pub fn jacobian_source(model: &dyn SystemModel, mode: JacobianMode) -> JacobianSource {
    let probe_x = Vector::zeros(model.state_dim());
    let probe_u = Vector::zeros(model.input_dim());
    match mode {
        JacobianMode::Auto
            if model.transition_jacobians(&probe_x, &probe_u).is_some()
                && model.observation_jacobian(&probe_x).is_some() =>
        {
            JacobianSource::Analytic
        }
        _ => JacobianSource::FiniteDifference,
    }
}

/// `(F, G)` at `(x, u)` from the chosen source.
pub fn transition_jacobians(
    model: &dyn SystemModel,
    x: &Vector,
    u: &Vector,
    mode: JacobianMode,
) -> Result<(Matrix, Matrix)> {
    if mode == JacobianMode::Auto {
        if let Some(j) = model.transition_jacobians(x, u) {
            return Ok(j);
        }
    }
    let f = finite_diff_jacobian(|xx| model.transition(xx, u), x, DEFAULT_FD_STEP)?;
    let g = finite_diff_jacobian(|uu| model.transition(x, uu), u, DEFAULT_FD_STEP)?;
    Ok((f, g))
}

/// `H` at `x` from the chosen source.
pub fn observation_jacobian(model: &dyn SystemModel, x: &Vector, mode: JacobianMode) -> Result<Matrix> {
    if mode == JacobianMode::Auto {
        if let Some(h) = model.observation_jacobian(x) {
            return Ok(h);
        }
    }
    finite_diff_jacobian(|xx| model.observe(xx), x, DEFAULT_FD_STEP)
}

/// `x' = A·x + B·u`, `y = C·x`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
}

impl LinearModel {
    pub fn new(a: Matrix, b: Matrix, c: Matrix) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::NonSquare {
                rows: a.nrows(),
                cols: a.ncols(),
            });
        }
        if b.nrows() != n {
            return Err(Error::dim("input matrix rows", n, b.nrows()));
        }
        if c.ncols() != n {
            return Err(Error::dim("output matrix columns", n, c.ncols()));
        }
        Ok(LinearModel { a, b, c })
    }
}

impl SystemModel for LinearModel {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    fn transition(&self, x: &Vector, u: &Vector) -> Vector {
        &self.a * x + &self.b * u
    }

    fn observe(&self, x: &Vector) -> Vector {
        &self.c * x
    }

    fn transition_jacobians(&self, _x: &Vector, _u: &Vector) -> Option<(Matrix, Matrix)> {
        Some((self.a.clone(), self.b.clone()))
    }

    fn observation_jacobian(&self, _x: &Vector) -> Option<Matrix> {
        Some(self.c.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    struct NoJacobians(RigidLink);

    impl SystemModel for NoJacobians {
        fn state_dim(&self) -> usize {
            2
        }
        fn input_dim(&self) -> usize {
            2
        }
        fn output_dim(&self) -> usize {
            3
        }
        fn transition(&self, x: &Vector, u: &Vector) -> Vector {
            self.0.transition(x, u)
        }
        fn observe(&self, x: &Vector) -> Vector {
            self.0.observe(x)
        }
    }

    #[test]
    fn source_resolution() {
        let rl = RigidLink::default();
        assert_eq!(jacobian_source(&rl, JacobianMode::Auto), JacobianSource::Analytic);
        assert_eq!(
            jacobian_source(&rl, JacobianMode::FiniteDifference),
            JacobianSource::FiniteDifference
        );
        assert_eq!(
            jacobian_source(&NoJacobians(rl), JacobianMode::Auto),
            JacobianSource::FiniteDifference
        );
    }

    #[test]
    fn fallback_matches_analytic() {
        let rl = RigidLink::default();
        let x = Vector::from_column_slice(&[0.4, 1.1]);
        let u = Vector::from_column_slice(&[3.0, -2.0]);
        let (fa, ga) = transition_jacobians(&rl, &x, &u, JacobianMode::Auto).unwrap();
        let (fd, gd) = transition_jacobians(&NoJacobians(rl.clone()), &x, &u, JacobianMode::Auto).unwrap();
        assert_relative_eq!(fa, fd, epsilon = 1e-8);
        assert_relative_eq!(ga, gd, epsilon = 1e-8);
        let ha = observation_jacobian(&rl, &x, JacobianMode::Auto).unwrap();
        let hd = observation_jacobian(&rl, &x, JacobianMode::FiniteDifference).unwrap();
        assert_relative_eq!(ha, hd, epsilon = 1e-8);
    }

    #[test]
    fn linear_model_validates_shapes() {
        let a = Matrix::identity(2, 2);
        assert!(LinearModel::new(a.clone(), Matrix::zeros(3, 1), Matrix::identity(2, 2)).is_err());
        assert!(LinearModel::new(a.clone(), Matrix::zeros(2, 1), Matrix::zeros(1, 3)).is_err());
        let m = LinearModel::new(a, Matrix::zeros(2, 1), Matrix::identity(2, 2)).unwrap();
        assert_eq!((m.state_dim(), m.input_dim(), m.output_dim()), (2, 1, 2));
    }
}
