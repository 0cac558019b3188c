//! Sigma-point generation and unscented moment reconstruction.

use crate::error::{Error, Result};
use crate::numerics::{symmetrize, Matrix, SpdMatrix, Vector};
use crate::filters::GaussianBelief;

/// Default spread parameter `a`.
pub const DEFAULT_SPREAD: f64 = 1.0;

/// `2n+1` weighted points encoding a Gaussian belief.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaEnsemble {
    points: Vec<Vector>,
    weights: Vec<f64>,
    spread: f64,
}

impl SigmaEnsemble {
    pub fn points(&self) -> &[Vector] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn spread(&self) -> f64 {
        self.spread
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Weighted mean of the points.
    pub fn mean(&self) -> Vector {
        weighted_mean(&self.points, &self.weights)
    }

    /// Pushes every point through `f`, keeping the weights.
    pub fn map<F: FnMut(&Vector) -> Vector>(&self, f: F) -> Vec<Vector> {
        self.points.iter().map(f).collect()
    }
}

/// Points `mean ± √(n+a)·L_i` around `mean`, where `L = chol(cov)`.
pub fn generate(mean: &Vector, cov: &SpdMatrix, a: f64) -> Result<SigmaEnsemble> {
    let n = mean.len();
    if cov.dim() != n {
        return Err(Error::dim("sigma-point covariance", n, cov.dim()));
    }
    if !(a >= 0.0) || !a.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "spread parameter must be finite and >= 0, got {a}"
        )));
    }
    let l = cov.cholesky_factor() * (n as f64 + a).sqrt();
    let mut points = Vec::with_capacity(2 * n + 1);
    points.push(mean.clone());
    for i in 0..n {
        points.push(mean + l.column(i));
    }
    for i in 0..n {
        points.push(mean - l.column(i));
    }
    let denom = n as f64 + a;
    let mut weights = vec![1.0 / (2.0 * denom); 2 * n + 1];
    weights[0] = a / denom;
    Ok(SigmaEnsemble {
        points,
        weights,
        spread: a,
    })
}

/// Weighted mean and covariance of `points` (with the ensemble's weights),
/// plus an optional additive covariance.
pub fn reconstruct_points(
    e: &SigmaEnsemble,
    points: &[Vector],
    additive: Option<&SpdMatrix>,
) -> Result<GaussianBelief> {
    let (mean, cov) = moments(e, points)?;
    let cov = match additive {
        Some(q) => {
            if q.dim() != mean.len() {
                return Err(Error::dim("additive covariance", mean.len(), q.dim()));
            }
            cov + q.matrix()
        }
        None => cov,
    };
    GaussianBelief::new(mean, SpdMatrix::repair(cov)?)
}

/// Moments of the ensemble itself (see [`reconstruct_points`]).
pub fn reconstruct(e: &SigmaEnsemble, additive: Option<&SpdMatrix>) -> Result<GaussianBelief> {
    reconstruct_points(e, &e.points, additive)
}

/// Weighted mean and symmetrised covariance without any SPD check; degenerate
/// spreads (all points equal) are legitimate here.
pub fn moments(e: &SigmaEnsemble, points: &[Vector]) -> Result<(Vector, Matrix)> {
    check_len(e, points.len())?;
    let dim = points[0].len();
    if let Some(p) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::dim("sigma point", dim, p.len()));
    }
    let mean = weighted_mean(points, &e.weights);
    let mut cov = Matrix::zeros(dim, dim);
    for (p, w) in points.iter().zip(&e.weights) {
        let d = p - &mean;
        cov.ger(*w, &d, &d, 1.0);
    }
    Ok((mean, symmetrize(&cov)?))
}

/// `Σ Wᵢ (aᵢ − ā)(bᵢ − b̄)ᵀ` with both means taken with the ensemble weights.
pub fn cross_cov(ea: &SigmaEnsemble, points_b: &[Vector]) -> Result<Matrix> {
    cross_cov_points(ea, &ea.points, points_b)
}

/// Like [`cross_cov`] but with an explicit left point set sharing `ea`'s weights.
pub fn cross_cov_points(ea: &SigmaEnsemble, points_a: &[Vector], points_b: &[Vector]) -> Result<Matrix> {
    check_len(ea, points_a.len())?;
    check_len(ea, points_b.len())?;
    let da = points_a[0].len();
    let db = points_b[0].len();
    if let Some(p) = points_b.iter().find(|p| p.len() != db) {
        return Err(Error::dim("cross-covariance point", db, p.len()));
    }
    let ma = weighted_mean(points_a, &ea.weights);
    let mb = weighted_mean(points_b, &ea.weights);
    let mut c = Matrix::zeros(da, db);
    for ((a, b), w) in points_a.iter().zip(points_b).zip(&ea.weights) {
        c.ger(*w, &(a - &ma), &(b - &mb), 1.0);
    }
    Ok(c)
}

fn check_len(e: &SigmaEnsemble, len: usize) -> Result<()> {
    if len != e.points.len() {
        return Err(Error::dim("sigma point count", e.points.len(), len));
    }
    Ok(())
}

fn weighted_mean(points: &[Vector], weights: &[f64]) -> Vector {
    let mut m = Vector::zeros(points[0].len());
    for (p, w) in points.iter().zip(weights) {
        m.axpy(*w, p, 1.0);
    }
    m
}
