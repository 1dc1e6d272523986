//! Dense SVD-based helpers: numerical rank, null spaces, column spaces,
//! minimum-norm least squares and principal angles.
//!
//! Matrices are `nalgebra::DMatrix<f64>` throughout; the decomposition itself
//! runs on `faer`, which is several times faster on the tall matrices the
//! deformation complex produces.

use faer::Mat;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Singular value decomposition `m = u * diag(s) * vᵀ` with `s` non-increasing.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: DMatrix<f64>,
    pub singular_values: Vec<f64>,
    pub v: DMatrix<f64>,
}

impl Svd {
    pub fn sigma_max(&self) -> f64 {
        self.singular_values.first().copied().unwrap_or(0.0)
    }

    /// Number of singular values above `tol * sigma_max`.
    pub fn rank(&self, tol: f64) -> usize {
        let cutoff = tol * self.sigma_max();
        self.singular_values.iter().filter(|&&s| s > cutoff).count()
    }
}

fn to_faer(m: &DMatrix<f64>) -> Mat<f64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

fn from_faer(m: faer::MatRef<'_, f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

fn decompose(m: &DMatrix<f64>, thin: bool) -> Result<Svd> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Ok(Svd {
            u: DMatrix::identity(m.nrows(), m.nrows()),
            singular_values: Vec::new(),
            v: DMatrix::identity(m.ncols(), m.ncols()),
        });
    }
    let f = to_faer(m);
    let svd = if thin { f.thin_svd() } else { f.svd() }
        .map_err(|e| Error::LinAlg(format!("svd did not converge: {e:?}")))?;
    let s = svd.S().column_vector();
    let singular_values: Vec<f64> = (0..s.nrows()).map(|i| s[i]).collect();
    let out = Svd {
        u: from_faer(svd.U()),
        singular_values,
        v: from_faer(svd.V()),
    };
    if out.singular_values.windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::LinAlg("singular values not sorted".into()));
    }
    Ok(out)
}

/// Thin SVD: `u` is `rows × p`, `v` is `cols × p` with `p = min(rows, cols)`.
pub fn thin_svd(m: &DMatrix<f64>) -> Result<Svd> {
    decompose(m, true)
}

/// Full SVD: square `u` and `v`.
pub fn full_svd(m: &DMatrix<f64>) -> Result<Svd> {
    decompose(m, false)
}

pub fn singular_values(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    Ok(thin_svd(m)?.singular_values)
}

/// Numerical rank with threshold `tol * sigma_max`.
pub fn rank(m: &DMatrix<f64>, tol: f64) -> Result<usize> {
    Ok(thin_svd(m)?.rank(tol))
}

/// Orthonormal basis of the null space, as columns.
pub fn null_space(m: &DMatrix<f64>, tol: f64) -> Result<DMatrix<f64>> {
    let svd = if m.nrows() >= m.ncols() {
        thin_svd(m)?
    } else {
        full_svd(m)?
    };
    let r = svd.rank(tol);
    let cols = m.ncols();
    Ok(svd.v.columns(r, cols - r).into_owned())
}

/// Orthonormal basis of the column space, as columns.
pub fn column_space(m: &DMatrix<f64>, tol: f64) -> Result<DMatrix<f64>> {
    let svd = thin_svd(m)?;
    let r = svd.rank(tol);
    Ok(svd.u.columns(0, r).into_owned())
}

/// Minimum-norm least-squares solution of `m x ≈ b` via the pseudo-inverse.
pub fn lstsq(m: &DMatrix<f64>, b: &DVector<f64>, tol: f64) -> Result<DVector<f64>> {
    let svd = thin_svd(m)?;
    let r = svd.rank(tol);
    let mut x = DVector::zeros(m.ncols());
    for i in 0..r {
        let coef = svd.u.column(i).dot(b) / svd.singular_values[i];
        x.axpy(coef, &svd.v.column(i), 1.0);
    }
    Ok(x)
}

/// Largest column norm of `k - q qᵀ k`, for `q` with orthonormal columns.
pub fn projection_residual(q: &DMatrix<f64>, k: &DMatrix<f64>) -> f64 {
    let proj = q * (q.transpose() * k);
    let diff = k - proj;
    diff.column_iter().map(|c| c.norm()).fold(0.0, f64::max)
}

/// Sine of the largest principal angle between two subspaces given by
/// orthonormal column bases of equal dimension.
pub fn max_principal_angle_sine(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    if a.ncols() != b.ncols() {
        return Ok(1.0);
    }
    if a.ncols() == 0 {
        return Ok(0.0);
    }
    let diff = a - b * (b.transpose() * a);
    Ok(thin_svd(&diff)?.sigma_max())
}

/// Spectral condition number of a square matrix.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let s = m.clone().singular_values();
    let max = s.max();
    let min = s.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().singular_values().max()
}
