use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::ui::{UiEstimator, UiResidual};
use super::SystemModel;
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Vector};
use crate::optimize::NlsOptions;

/// Physical parameters of the single rigid link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigidLinkParams {
    /// Link mass (kg).
    pub mass: f64,
    /// Link length (m).
    pub length: f64,
    /// Viscous damping (N·m·s).
    pub damping: f64,
    /// Gravitational acceleration (m/s²).
    pub gravity: f64,
    /// Euler integration step (s).
    pub step: f64,
}

impl Default for RigidLinkParams {
    fn default() -> Self {
        RigidLinkParams {
            mass: 1.0,
            length: 1.0,
            damping: 5.0,
            gravity: 9.81,
            step: 0.01,
        }
    }
}

impl RigidLinkParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("mass", self.mass),
            ("length", self.length),
            ("damping", self.damping),
            ("gravity", self.gravity),
            ("step", self.step),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "rigid-link {name} must be finite and > 0, got {v}"
                )));
            }
        }
        Ok(())
    }

    fn inertia(&self) -> f64 {
        self.mass * self.length * self.length
    }
}

/// Net torque `−b·x₁ + m·g·l·cos x₂ + u₁·l·sin x₂ − u₂·l·cos x₂` (N·m).
pub fn rigid_link_eom(p: &RigidLinkParams, x: &Vector, u: &Vector) -> f64 {
    let (s, c) = x[1].sin_cos();
    -p.damping * x[0] + p.mass * p.gravity * p.length * c + u[0] * p.length * s
        - u[1] * p.length * c
}

/// Euler step: velocity `x₁` and angle `x₂`.
pub fn rigid_link_f(p: &RigidLinkParams, x: &Vector, u: &Vector) -> Vector {
    let acc = rigid_link_eom(p, x, u) / p.inertia();
    let h = p.step;
    Vector::from_column_slice(&[x[0] + acc * h, x[1] + x[0] * h + 0.5 * acc * h * h])
}

/// Link-tip measurement `(x₁, l·cos x₂, l·sin x₂)`.
pub fn rigid_link_h(p: &RigidLinkParams, x: &Vector) -> Vector {
    let (s, c) = x[1].sin_cos();
    Vector::from_column_slice(&[x[0], p.length * c, p.length * s])
}

/// `(∂Φ/∂x, ∂Φ/∂u)` of the torque balance, each a single row.
fn eom_gradients(p: &RigidLinkParams, x: &Vector, u: &Vector) -> (Matrix, Matrix) {
    let (s, c) = x[1].sin_cos();
    let l = p.length;
    let dx = Matrix::from_row_slice(
        1,
        2,
        &[
            -p.damping,
            -p.mass * p.gravity * l * s + u[0] * l * c + u[1] * l * s,
        ],
    );
    let du = Matrix::from_row_slice(1, 2, &[l * s, -l * c]);
    (dx, du)
}

/// The rigid-link robot as a [`SystemModel`] with analytic Jacobians.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RigidLink {
    pub params: RigidLinkParams,
}

impl RigidLink {
    pub fn new(params: RigidLinkParams) -> Result<Self> {
        params.validate()?;
        Ok(RigidLink { params })
    }
}

impl SystemModel for RigidLink {
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
        rigid_link_f(&self.params, x, u)
    }

    fn observe(&self, x: &Vector) -> Vector {
        rigid_link_h(&self.params, x)
    }

    fn transition_jacobians(&self, x: &Vector, u: &Vector) -> Option<(Matrix, Matrix)> {
        let p = &self.params;
        let (phi_x, phi_u) = eom_gradients(p, x, u);
        let h = p.step;
        let k = 1.0 / p.inertia();
        // Rows: d(x₁')/d· = k·h·∇Φ, d(x₂')/d· = ½·k·h²·∇Φ, plus the identity/coupling terms.
        let mut f = Matrix::zeros(2, 2);
        let mut g = Matrix::zeros(2, 2);
        for j in 0..2 {
            f[(0, j)] = k * h * phi_x[(0, j)];
            f[(1, j)] = 0.5 * k * h * h * phi_x[(0, j)];
            g[(0, j)] = k * h * phi_u[(0, j)];
            g[(1, j)] = 0.5 * k * h * h * phi_u[(0, j)];
        }
        f[(0, 0)] += 1.0;
        f[(1, 1)] += 1.0;
        f[(1, 0)] += h;
        Some((f, g))
    }

    fn observation_jacobian(&self, x: &Vector) -> Option<Matrix> {
        let (s, c) = x[1].sin_cos();
        let l = self.params.length;
        Some(Matrix::from_row_slice(
            3,
            2,
            &[1.0, 0.0, 0.0, -l * s, 0.0, l * c],
        ))
    }
}

/// Quasi-static torque balance `Φ(x, u) = Φᴱᵒᴹ(x, u)` as a UI residual.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuasiStatic {
    pub params: RigidLinkParams,
}

impl UiResidual for QuasiStatic {
    fn input_dim(&self) -> usize {
        2
    }

    fn residual_dim(&self) -> usize {
        1
    }

    fn eval(&self, x: &Vector, u: &Vector) -> Vector {
        Vector::from_element(1, rigid_link_eom(&self.params, x, u))
    }

    fn jacobians(&self, x: &Vector, u: &Vector) -> Option<(Matrix, Matrix)> {
        Some(eom_gradients(&self.params, x, u))
    }
}

/// UI estimator that solves the quasi-static least-squares problem.
pub fn quasi_static_residual(params: RigidLinkParams, options: NlsOptions) -> UiEstimator {
    UiEstimator::Residual {
        residual: Arc::new(QuasiStatic { params }),
        options,
    }
}

/// `u₁ = A·sgn(sin(ω·t·Δ))`, `u₂ = 0`, with `sgn(0) = +1`.
///
/// `sample_period` (Δ) converts the sample index to the time base of `ω`;
/// `Δ = 1` reads `t` directly as the phase variable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SquareWave {
    pub amplitude: f64,
    pub angular_frequency: f64,
    pub sample_period: f64,
}

impl Default for SquareWave {
    fn default() -> Self {
        SquareWave {
            amplitude: 10.0,
            angular_frequency: 0.1 * PI,
            sample_period: 1.0,
        }
    }
}

impl SquareWave {
    pub fn at(&self, t: usize) -> Vector {
        let phase = self.angular_frequency * (t as f64 * self.sample_period);
        let s = phase.sin();
        let sgn = if s < 0.0 { -1.0 } else { 1.0 };
        Vector::from_column_slice(&[self.amplitude * sgn, 0.0])
    }
}

/// `u₁ = 10·sgn(sin 0.1πt)`, `u₂ = 0` with `t` the sample index.
pub fn square_wave_ui(t: usize) -> Vector {
    SquareWave::default().at(t)
}
