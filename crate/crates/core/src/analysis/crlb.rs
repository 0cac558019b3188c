use crate::error::{Error, Result};
use crate::models::{observation_jacobian, transition_jacobians, JacobianMode, SystemModel, Trajectory};
use crate::numerics::{Matrix, SpdMatrix};

/// One information-matrix step `J' = (Q + F·J⁻¹·Fᵀ)⁻¹ + Hᵀ·R⁻¹·H`.
pub fn information_step(j: &SpdMatrix, f: &Matrix, h_next: &Matrix, q: &SpdMatrix, r: &SpdMatrix) -> Result<SpdMatrix> {
    let predicted = SpdMatrix::repair(q.matrix() + f * j.inverse() * f.transpose())?;
    let measurement = h_next.transpose() * r.solve(h_next);
    SpdMatrix::repair(predicted.inverse() + measurement)
}

/// Posterior Cramér–Rao bounds `J_t⁻¹` along the true trajectory, with the
/// true UI treated as known and `J₀ = P₀⁻¹ + H₀ᵀ·R⁻¹·H₀`.
pub fn crlb_trace(
    model: &dyn SystemModel,
    trajectory: &Trajectory,
    q: &SpdMatrix,
    r: &SpdMatrix,
    p0: &SpdMatrix,
    mode: JacobianMode,
) -> Result<Vec<Matrix>> {
    let recs = trajectory.records();
    let singular = |step| move |_| Error::SingularInformation { step };
    let h0 = observation_jacobian(model, &recs[0].x, mode)?;
    let mut j = SpdMatrix::repair(p0.inverse() + h0.transpose() * r.solve(&h0)).map_err(singular(0))?;
    let mut out = Vec::with_capacity(recs.len());
    out.push(j.inverse());
    for t in 1..recs.len() {
        let (f, _) = transition_jacobians(model, &recs[t - 1].x, &recs[t - 1].u, mode)?;
        let h = observation_jacobian(model, &recs[t].x, mode)?;
        j = information_step(&j, &f, &h, q, r).map_err(singular(t))?;
        out.push(j.inverse());
    }
    if out.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::non_finite("CRLB"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{simulate, LinearModel, RigidLink};
    use crate::numerics::{SeededRng, Vector};
    use approx::assert_relative_eq;

    fn one() -> SpdMatrix {
        SpdMatrix::identity(1)
    }

    #[test]
    fn scalar_recursion_reaches_golden_ratio() {
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        let f = Matrix::identity(1, 1);
        let mut j = SpdMatrix::scaled_identity(1, 2.0).unwrap();
        let mut iters = 0;
        while (j.matrix()[(0, 0)] - phi).abs() > 1e-10 {
            j = information_step(&j, &f, &f, &one(), &one()).unwrap();
            iters += 1;
            assert!(iters <= 60);
        }
        assert_relative_eq!(1.0 / j.matrix()[(0, 0)], phi - 1.0, epsilon = 1e-9);
    }

    #[test]
    fn zero_observation_is_pure_prediction() {
        let f = Matrix::from_element(1, 1, 0.9);
        let j = SpdMatrix::scaled_identity(1, 4.0).unwrap();
        let next = information_step(&j, &f, &Matrix::zeros(1, 1), &one(), &one()).unwrap();
        assert_relative_eq!(next.matrix()[(0, 0)], 1.0 / (1.0 + 0.81 / 4.0), epsilon = 1e-14);
    }

    #[test]
    fn accurate_measurements_drive_bound_to_zero() {
        let m = LinearModel::new(
            Matrix::identity(2, 2),
            Matrix::zeros(2, 1),
            Matrix::identity(2, 2),
        )
        .unwrap();
        let tiny = SpdMatrix::scaled_identity(2, 1e-12).unwrap();
        let traj = simulate(&m, &|_| Vector::zeros(1), &SpdMatrix::identity(2), &tiny, &Vector::zeros(2), 5, &mut SeededRng::new(1)).unwrap();
        let bounds = crlb_trace(&m, &traj, &SpdMatrix::identity(2), &tiny, &SpdMatrix::identity(2), JacobianMode::Auto).unwrap();
        assert!(bounds.iter().all(|b| b.trace() < 1e-11));
    }

    #[test]
    fn rigid_link_information_stays_spd() {
        let m = RigidLink::default();
        let q = SpdMatrix::scaled_identity(2, 1e-3).unwrap();
        let r = SpdMatrix::scaled_identity(3, 0.5).unwrap();
        let traj = simulate(&m, &|_| Vector::from_column_slice(&[10.0, 0.0]), &q, &r, &Vector::zeros(2), 300, &mut SeededRng::new(2)).unwrap();
        let bounds = crlb_trace(&m, &traj, &q, &r, &SpdMatrix::scaled_identity(2, 0.5).unwrap(), JacobianMode::Auto).unwrap();
        assert_eq!(bounds.len(), 300);
        assert!(bounds.iter().all(|b| SpdMatrix::repair(b.clone()).is_ok()));
    }
}
