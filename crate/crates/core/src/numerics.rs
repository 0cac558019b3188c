//! Dense linear-algebra and sampling primitives shared by every other module.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative Frobenius tolerance for the symmetry check in [`SpdMatrix::new`].
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Relative singular-value cutoff used by [`pseudo_inverse`] when none is given.
pub const DEFAULT_PINV_TOL: f64 = 1e-12;
/// Relative step for central finite differences.
pub const DEFAULT_FD_STEP: f64 = 1e-6;

const JITTER_START: f64 = 1e-12;
const JITTER_STOP: f64 = 1e-6;

/// A symmetric positive-definite matrix together with its Cholesky factor.
///
/// The only way to obtain one is through a checked constructor, so holding an
/// `SpdMatrix` is proof that a square root exists.
#[derive(Debug, Clone)]
pub struct SpdMatrix {
    matrix: Matrix,
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
}

impl PartialEq for SpdMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.matrix == other.matrix
    }
}

impl SpdMatrix {
    /// Checks squareness, finiteness and symmetry (relative Frobenius 1e-10),
    /// then factorises with the jitter ladder. The stored matrix is the exactly
    /// symmetrised input; any jitter only affects the cached factor.
    pub fn new(matrix: Matrix) -> Result<Self> {
        check_square(&matrix)?;
        check_finite(&matrix, "covariance")?;
        let asym = (&matrix - matrix.transpose()).norm();
        if asym > SYMMETRY_TOL * matrix.norm().max(f64::MIN_POSITIVE) {
            return Err(Error::NotPositiveDefinite {
                what: format!("matrix is not symmetric (asymmetry {asym:.3e})"),
            });
        }
        let matrix = symmetrize(&matrix)?;
        let (chol, jitter) = cholesky_with_jitter(&matrix)?;
        Ok(SpdMatrix {
            matrix,
            chol,
            jitter,
        })
    }

    /// Symmetrises an arbitrary square matrix before the checked construction.
    /// Used after covariance updates whose round-off breaks exact symmetry.
    pub fn repair(matrix: Matrix) -> Result<Self> {
        Self::new(symmetrize(&matrix)?)
    }

    pub fn identity(n: usize) -> Self {
        Self::scaled_identity(n, 1.0).expect("identity is SPD")
    }

    pub fn scaled_identity(n: usize, scale: f64) -> Result<Self> {
        Self::new(Matrix::identity(n, n) * scale)
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(Matrix::from_diagonal(&Vector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> Matrix {
        self.matrix
    }

    /// Lower-triangular factor `L` with `L·Lᵀ = P` (plus jitter, if any was needed).
    pub fn cholesky_factor(&self) -> Matrix {
        self.chol.l()
    }

    /// Diagonal jitter that was added to make the factorisation succeed.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Solves `P·X = B` through the Cholesky factor.
    pub fn solve(&self, b: &Matrix) -> Matrix {
        self.chol.solve(b)
    }

    pub fn inverse(&self) -> Matrix {
        self.chol.inverse()
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace()
    }
}

/// Tolerance on negative eigenvalues of a [`PsdMatrix`], relative to its norm.
pub const PSD_TOL: f64 = 1e-12;

/// A symmetric positive-semidefinite matrix. Admits the zero matrix, which
/// `SpdMatrix` does not; used for UI covariances such as `E = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdMatrix {
    matrix: Matrix,
}

impl PsdMatrix {
    pub fn new(matrix: Matrix) -> Result<Self> {
        check_square(&matrix)?;
        check_finite(&matrix, "covariance")?;
        let norm = matrix.norm();
        let asym = (&matrix - matrix.transpose()).norm();
        if asym > SYMMETRY_TOL * norm.max(f64::MIN_POSITIVE) {
            return Err(Error::NotPositiveDefinite {
                what: format!("matrix is not symmetric (asymmetry {asym:.3e})"),
            });
        }
        let matrix = symmetrize(&matrix)?;
        let min_eig = matrix.clone().symmetric_eigenvalues().min();
        if min_eig < -PSD_TOL * norm {
            return Err(Error::NotPositiveDefinite {
                what: format!("matrix has negative eigenvalue {min_eig:.3e}"),
            });
        }
        Ok(PsdMatrix { matrix })
    }

    pub fn zeros(n: usize) -> Self {
        PsdMatrix {
            matrix: Matrix::zeros(n, n),
        }
    }

    pub fn scaled_identity(n: usize, scale: f64) -> Result<Self> {
        Self::new(Matrix::identity(n, n) * scale)
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }
}

impl From<SpdMatrix> for PsdMatrix {
    fn from(m: SpdMatrix) -> Self {
        PsdMatrix { matrix: m.matrix }
    }
}

/// Square covariance with a known dimension; lets schedules hold either
/// [`SpdMatrix`] or [`PsdMatrix`].
pub trait Covariance {
    fn dim(&self) -> usize;
    fn matrix(&self) -> &Matrix;
}

impl Covariance for SpdMatrix {
    fn dim(&self) -> usize {
        SpdMatrix::dim(self)
    }
    fn matrix(&self) -> &Matrix {
        SpdMatrix::matrix(self)
    }
}

impl Covariance for PsdMatrix {
    fn dim(&self) -> usize {
        PsdMatrix::dim(self)
    }
    fn matrix(&self) -> &Matrix {
        PsdMatrix::matrix(self)
    }
}

fn cholesky_with_jitter(m: &Matrix) -> Result<(Cholesky<f64, Dyn>, f64)> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok((c, 0.0));
    }
    let n = m.nrows();
    let scale = m.trace() / n as f64;
    if scale > 0.0 && scale.is_finite() {
        let mut factor = JITTER_START;
        while factor <= JITTER_STOP * (1.0 + 1e-9) {
            let jitter = factor * scale;
            let shifted = m + Matrix::identity(n, n) * jitter;
            if let Some(c) = Cholesky::new(shifted) {
                return Ok((c, jitter));
            }
            factor *= 10.0;
        }
    }
    Err(Error::NotPositiveDefinite {
        what: "cholesky factorisation failed after jitter escalation".into(),
    })
}

/// Lower-triangular square root of an SPD matrix.
pub fn cholesky_sqrt(p: &SpdMatrix) -> Matrix {
    p.cholesky_factor()
}

/// Returns `(A + Aᵀ)/2`.
pub fn symmetrize(a: &Matrix) -> Result<Matrix> {
    check_square(a)?;
    Ok((a + a.transpose()) * 0.5)
}

/// Moore–Penrose pseudo-inverse; singular values below `tol·σ_max` are dropped.
pub fn pseudo_inverse(a: &Matrix, tol: f64) -> Matrix {
    let (rows, cols) = a.shape();
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if !(smax > 0.0) {
        return Matrix::zeros(cols, rows);
    }
    let cutoff = tol * smax;
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let mut out = Matrix::zeros(cols, rows);
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff {
            out += v_t.row(k).transpose() * u.column(k).transpose() / s;
        }
    }
    out
}

/// Singular values in descending order. A matrix with `min(rows, cols)`
/// singular values yields exactly that many entries.
pub fn singular_values(a: &Matrix) -> Vec<f64> {
    let mut s: Vec<f64> = a.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

/// Central-difference Jacobian; column `j` uses `δ = step·max(1, |x_j|)`.
pub fn finite_diff_jacobian<F>(f: F, x0: &Vector, step: f64) -> Result<Matrix>
where
    F: Fn(&Vector) -> Vector,
{
    let n = x0.len();
    let mut cols: Vec<Vector> = Vec::with_capacity(n);
    let mut x = x0.clone();
    for j in 0..n {
        let delta = step * x0[j].abs().max(1.0);
        x[j] = x0[j] + delta;
        let fp = f(&x);
        x[j] = x0[j] - delta;
        let fm = f(&x);
        x[j] = x0[j];
        if fp.len() != fm.len() {
            return Err(Error::dim("finite-difference output", fp.len(), fm.len()));
        }
        let col = (fp - fm) / (2.0 * delta);
        if col.iter().any(|v| !v.is_finite()) {
            return Err(Error::non_finite("finite-difference jacobian"));
        }
        cols.push(col);
    }
    let rows = cols.first().map_or(0, |c| c.len());
    if cols.iter().any(|c| c.len() != rows) {
        return Err(Error::InvalidArgument(
            "function output dimension varies".into(),
        ));
    }
    Ok(Matrix::from_fn(rows, n, |i, j| cols[j][i]))
}

/// Seedable, splittable random stream.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent sub-stream for index `i`; depends only on `(seed, i)`.
    pub fn split(&self, index: u64) -> SeededRng {
        SeededRng::new(split_seed(self.seed, index))
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }
}

/// SplitMix64-style derivation of a child seed.
pub fn split_seed(base: u64, index: u64) -> u64 {
    let mut z = base
        ^ index
            .wrapping_add(1)
            .wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draws `mean + L·z` with `z` standard normal and `L` the Cholesky factor of `cov`.
pub fn draw_gaussian(rng: &mut SeededRng, mean: &Vector, cov: &SpdMatrix) -> Result<Vector> {
    if mean.len() != cov.dim() {
        return Err(Error::dim("gaussian mean", cov.dim(), mean.len()));
    }
    let z = Vector::from_fn(mean.len(), |_, _| rng.standard_normal());
    Ok(mean + cov.chol.l() * z)
}

pub(crate) fn check_square(a: &Matrix) -> Result<()> {
    if a.nrows() != a.ncols() || a.nrows() == 0 {
        return Err(Error::NonSquare {
            rows: a.nrows(),
            cols: a.ncols(),
        });
    }
    Ok(())
}

pub(crate) fn check_finite(a: &Matrix, what: &str) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::non_finite(what))
    }
}


#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn cholesky_of_identity_and_diagonal() {
        let l = cholesky_sqrt(&SpdMatrix::identity(2));
        assert_eq!(l, Matrix::identity(2, 2));
        let p = SpdMatrix::from_diagonal(&[4.0, 9.0]).unwrap();
        let l = cholesky_sqrt(&p);
        assert_eq!(l, Matrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 3.0]));
    }

    #[test]
    fn cholesky_reconstructs_random_spd() {
        let mut rng = SeededRng::new(7);
        let b = Matrix::from_fn(5, 5, |_, _| rng.standard_normal());
        let a = &b * b.transpose() + Matrix::identity(5, 5);
        let l = cholesky_sqrt(&SpdMatrix::new(a.clone()).unwrap());
        assert!((&l * l.transpose() - &a).norm() < 1e-10 * a.norm());
        assert!(l.upper_triangle().iter().enumerate().all(|(k, v)| {
            let (i, j) = (k % 5, k / 5);
            i >= j || *v == 0.0
        }));
    }

    #[test]
    fn jitter_rescues_round_off_indefiniteness() {
        // Rank-one matrix: semidefinite, so plain Cholesky fails on the zero pivot.
        let v = Vector::from_column_slice(&[1.0, 2.0]);
        let p = SpdMatrix::new(&v * v.transpose()).unwrap();
        assert!(p.jitter() > 0.0);
        assert!(p.jitter() <= 1e-6 * p.trace() / 2.0 * 1.0001);
    }

    #[test]
    fn clearly_indefinite_is_rejected() {
        let m = Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(
            SpdMatrix::new(m),
            Err(Error::NotPositiveDefinite { .. })
        ));
        assert!(SpdMatrix::new(Matrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn asymmetric_input_is_rejected_but_repairable() {
        let m = Matrix::from_row_slice(2, 2, &[2.0, 0.5, 0.0, 2.0]);
        assert!(SpdMatrix::new(m.clone()).is_err());
        let p = SpdMatrix::repair(m).unwrap();
        assert_eq!(p.matrix()[(0, 1)], 0.25);
    }

    #[test]
    fn pseudo_inverse_examples() {
        assert_eq!(
            pseudo_inverse(&Matrix::identity(3, 3), DEFAULT_PINV_TOL),
            Matrix::identity(3, 3)
        );
        let row = Matrix::from_row_slice(1, 2, &[1.0, 0.0]);
        assert_eq!(
            pseudo_inverse(&row, DEFAULT_PINV_TOL),
            Matrix::from_column_slice(2, 1, &[1.0, 0.0])
        );
        let d = Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(pseudo_inverse(&d, 1e-12), d);
        assert_eq!(
            pseudo_inverse(&Matrix::zeros(2, 3), DEFAULT_PINV_TOL),
            Matrix::zeros(3, 2)
        );
    }

    #[test]
    fn symmetrize_examples() {
        let a = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert_eq!(symmetrize(&a).unwrap(), Matrix::from_element(2, 2, 1.0));
        let skew = Matrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        assert_eq!(symmetrize(&skew).unwrap(), Matrix::zeros(2, 2));
        let s = Matrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0]);
        assert_eq!(symmetrize(&s).unwrap(), s);
        assert!(matches!(
            symmetrize(&Matrix::zeros(2, 3)),
            Err(Error::NonSquare { rows: 2, cols: 3 })
        ));
    }

    #[test]
    fn finite_difference_of_linear_map() {
        let a = Matrix::from_row_slice(3, 2, &[1.0, -2.0, 0.5, 4.0, 3.0, 0.0]);
        let x0 = Vector::from_column_slice(&[0.3, -7.0]);
        let j = finite_diff_jacobian(|x| &a * x, &x0, DEFAULT_FD_STEP).unwrap();
        assert_relative_eq!(j, a, epsilon = 1e-9);
        let id = finite_diff_jacobian(|x| x.clone(), &x0, DEFAULT_FD_STEP).unwrap();
        assert_relative_eq!(id, Matrix::identity(2, 2), epsilon = 1e-9);
    }

    #[test]
    fn finite_difference_reports_non_finite() {
        let x0 = Vector::from_column_slice(&[0.0]);
        let r = finite_diff_jacobian(|x| x.map(|v| 1.0 / v.abs().min(0.0)), &x0, 1e-6);
        assert!(matches!(r, Err(Error::NonFiniteEvaluation { .. })));
    }

    #[test]
    fn gaussian_draws_are_reproducible() {
        let mean = Vector::from_column_slice(&[1.0, -1.0]);
        let cov = SpdMatrix::identity(2);
        let a = draw_gaussian(&mut SeededRng::new(42), &mean, &cov).unwrap();
        let b = draw_gaussian(&mut SeededRng::new(42), &mean, &cov).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn near_zero_covariance_returns_mean() {
        let mean = Vector::from_column_slice(&[0.25, 3.0]);
        let cov = SpdMatrix::scaled_identity(2, 1e-300).unwrap();
        let s = draw_gaussian(&mut SeededRng::new(1), &mean, &cov).unwrap();
        assert_relative_eq!(s, mean, epsilon = 1e-140);
    }

    #[test]
    fn empirical_covariance_of_standard_normal() {
        let mut rng = SeededRng::new(2024);
        let mean = Vector::zeros(2);
        let cov = SpdMatrix::identity(2);
        let n = 100_000;
        let mut sum = Vector::zeros(2);
        let mut outer = Matrix::zeros(2, 2);
        for _ in 0..n {
            let s = draw_gaussian(&mut rng, &mean, &cov).unwrap();
            outer += &s * s.transpose();
            sum += s;
        }
        let m = sum / n as f64;
        let c = outer / n as f64 - &m * m.transpose();
        // Standard error of the mean is 1/sqrt(n) ≈ 0.0032.
        assert!(m.amax() < 3.0 * (1.0 / (n as f64).sqrt()));
        assert!((c - Matrix::identity(2, 2)).amax() < 0.02);
    }

    #[test]
    fn split_streams_differ_and_are_stable() {
        let base = SeededRng::new(9);
        assert_eq!(base.split(3).seed(), split_seed(9, 3));
        assert_ne!(base.split(3).seed(), base.split(4).seed());
        let mut a = base.split(5);
        let mut b = SeededRng::new(9).split(5);
        assert_eq!(a.next_u64(), b.next_u64());
    }
}
