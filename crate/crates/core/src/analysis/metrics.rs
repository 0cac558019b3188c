use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::FilterRun;
use crate::models::Trajectory;
use crate::numerics::Vector;

/// Default number of initial steps excluded from metrics.
pub const DEFAULT_TRANSIENT: usize = 100;

const DEGENERATE: f64 = 1e-12;

/// NMSE and SNR of one estimated signal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalMetrics {
    /// `Σ‖v̂ − v‖² / Σ‖v − v̄‖²`.
    pub nmse: f64,
    /// `10·log₁₀(Σ‖v‖² / Σ‖ṽ − mean ṽ‖²)`; infinite for error-free estimates.
    pub snr_db: f64,
}

/// State and UI metrics of one filter on one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateMetrics {
    pub nmse_x: f64,
    pub nmse_u: f64,
    pub snr_x_db: f64,
    pub snr_u_db: f64,
}

fn vector_mean(vs: &[&Vector]) -> Vector {
    let mut m = Vector::zeros(vs[0].len());
    for v in vs {
        m += *v;
    }
    m / vs.len() as f64
}

/// Metrics of `estimates` against `truth`, skipping the first `transient` steps.
pub fn signal_metrics(estimates: &[Vector], truth: &[Vector], transient: usize, what: &str) -> Result<SignalMetrics> {
    if estimates.len() != truth.len() {
        return Err(Error::dim(format!("{what} estimates"), truth.len(), estimates.len()));
    }
    if transient >= truth.len() {
        return Err(Error::InvalidArgument(format!(
            "transient {transient} leaves no steps out of {}",
            truth.len()
        )));
    }
    let sig: Vec<&Vector> = truth[transient..].iter().collect();
    let errs: Vec<Vector> = estimates[transient..]
        .iter()
        .zip(&sig)
        .map(|(e, v)| e - *v)
        .collect();
    let sig_mean = vector_mean(&sig);
    let spread: f64 = sig.iter().map(|v| (*v - &sig_mean).norm_squared()).sum();
    if spread < DEGENERATE {
        return Err(Error::DegenerateSignal { what: what.to_string() });
    }
    let err_energy: f64 = errs.iter().map(|e| e.norm_squared()).sum();
    let err_refs: Vec<&Vector> = errs.iter().collect();
    let err_mean = vector_mean(&err_refs);
    let err_spread: f64 = errs.iter().map(|e| (e - &err_mean).norm_squared()).sum();
    let power: f64 = sig.iter().map(|v| v.norm_squared()).sum();
    let snr_db = if err_spread > 0.0 {
        10.0 * (power / err_spread).log10()
    } else {
        f64::INFINITY
    };
    Ok(SignalMetrics {
        nmse: err_energy / spread,
        snr_db,
    })
}

/// State and aligned UI metrics for a filter run.
pub fn metrics(run: &FilterRun, trajectory: &Trajectory, transient: usize) -> Result<EstimateMetrics> {
    let x = signal_metrics(&run.state_estimates(), &trajectory.states(), transient, "state")?;
    let u = signal_metrics(&run.ui_estimates(), &trajectory.inputs(), transient, "UI")?;
    Ok(EstimateMetrics {
        nmse_x: x.nmse,
        nmse_u: u.nmse,
        snr_x_db: x.snr_db,
        snr_u_db: u.snr_db,
    })
}

/// Sample mean and (n−1) standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

pub fn mean_std(values: &[f64]) -> MeanStd {
    let n = values.len() as f64;
    if values.is_empty() {
        return MeanStd { mean: f64::NAN, std: f64::NAN };
    }
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    MeanStd { mean, std }
}

/// Per-step squared error `‖v̂_t − v_t‖²` averaged over runs.
pub fn mean_square_error_curve(estimates: &[Vec<Vector>], truth: &[Vec<Vector>]) -> Result<Vec<f64>> {
    if estimates.len() != truth.len() || estimates.is_empty() {
        return Err(Error::dim("runs", truth.len(), estimates.len()));
    }
    let len = truth[0].len();
    let mut acc = vec![0.0; len];
    for (est, tru) in estimates.iter().zip(truth) {
        if est.len() != len || tru.len() != len {
            return Err(Error::dim("run length", len, est.len().min(tru.len())));
        }
        for (a, (e, v)) in acc.iter_mut().zip(est.iter().zip(tru)) {
            *a += (e - v).norm_squared();
        }
    }
    let runs = estimates.len() as f64;
    Ok(acc.into_iter().map(|a| a / runs).collect())
}
