//! The linearized deformation complex `M_n(R)^2 -> S^2(R^n)^n -> S^3(R^n)^{n(n-1)/2}`
//! at the standard action, in coordinates.
//!
//! Flattening conventions:
//! * domain of `L^Φ`: `(A', B')` with both matrices column-major, `A'` first:
//!   `A'[r, c]` at `c n + r`, `B'[r, i]` (the `r`-th entry of `ω_i`) at
//!   `n^2 + i n + r`;
//! * `S^2(R^n)^n`: blocks `q_0, ..., q_{n-1}`, each `q_i.to_vector()`;
//! * `S^3(R^n)^{n(n-1)/2}`: blocks for pairs `i < j` in lexicographic order.

mod nonlinear;
mod subspace;

pub use nonlinear::{nonlinear_phi, nonlinear_psi, psi_after_theta_inverse, theta_phi};
pub use subspace::{
    change_basis_kernel, project_to_w, right_action, right_action_matrix, verify_transversality, ChangeBasisReport, SubspaceW,
    TransversalityReport, w_remainder,
};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{check_dim, Result};
use crate::linalg;
use crate::symtensor::{bracket, coordinate_len, make_q, BasisMatrix, SymMultiMap};

/// Default rank threshold relative to the largest singular value.
pub const RANK_TOL: f64 = 1e-9;

/// Number of pairs `i < j`.
pub fn pair_count(n: usize) -> usize {
    n * (n - 1) / 2
}

/// Pairs `(i, j)`, `i < j`, lexicographically.
pub fn pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
}

/// Splits a flat vector of `S^2(R^n)^n` into its `n` components.
pub fn split_tuple(n: usize, v: &DVector<f64>) -> Result<Vec<SymMultiMap>> {
    let len = coordinate_len(2, n);
    check_dim(n * len, v.len())?;
    (0..n)
        .map(|i| SymMultiMap::from_vector(2, n, &v.rows(i * len, len).into_owned()))
        .collect()
}

/// Flattens a tuple of same-order maps block by block.
pub fn join_tuple(maps: &[SymMultiMap]) -> DVector<f64> {
    let parts: Vec<f64> = maps.iter().flat_map(|m| m.coeffs().iter().copied()).collect();
    DVector::from_vec(parts)
}

/// Splits `(A', B')` coordinates into the two matrices.
pub fn split_domain(n: usize, v: &DVector<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_dim(2 * n * n, v.len())?;
    Ok((
        DMatrix::from_column_slice(n, n, &v.as_slice()[..n * n]),
        DMatrix::from_column_slice(n, n, &v.as_slice()[n * n..]),
    ))
}

pub fn join_domain(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DVector<f64> {
    let mut out: Vec<f64> = a.as_slice().to_vec();
    out.extend_from_slice(b.as_slice());
    DVector::from_vec(out)
}

/// `A' ∘ Q - Q(A' ·, ·) - Q(·, A' ·)`.
pub(crate) fn linear_action_on_q(q: &SymMultiMap, a: &DMatrix<f64>) -> SymMultiMap {
    let n = q.dim();
    let cols: Vec<DVector<f64>> = (0..n).map(|j| a.column(j).into_owned()).collect();
    SymMultiMap::from_basis_fn(n, 2, |idx| {
        let (x, y) = (idx[0], idx[1]);
        a * q.value_at(&[x, y]) - q.apply_first(y, &cols[x]) - q.apply_first(x, &cols[y])
    })
}

/// `L^Φ_B(A', B')` as a tuple.
pub fn apply_lphi(basis: &BasisMatrix, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Vec<SymMultiMap> {
    basis
        .q_maps()
        .iter()
        .enumerate()
        .map(|(i, q)| linear_action_on_q(q, a) + make_q(&b.column(i).into_owned()))
        .collect()
}

/// `L^Ψ_B(q)` as a tuple over pairs `i < j`.
pub fn apply_lpsi(basis: &BasisMatrix, q: &[SymMultiMap]) -> Result<Vec<SymMultiMap>> {
    let qv = basis.q_maps();
    pairs(basis.dim())
        .into_iter()
        .map(|(i, j)| Ok(bracket(&q[i], &qv[j])? - bracket(&q[j], &qv[i])?))
        .collect()
}

/// Matrix of `L^Φ_B`, shape `n dim S^2 × 2 n^2`.
pub fn build_lphi(basis: &BasisMatrix) -> DMatrix<f64> {
    let n = basis.dim();
    let rows = n * coordinate_len(2, n);
    let qv = basis.q_maps();
    let mut m = DMatrix::zeros(rows, 2 * n * n);
    let block = coordinate_len(2, n);
    for c in 0..n {
        for r in 0..n {
            let mut a = DMatrix::zeros(n, n);
            a[(r, c)] = 1.0;
            for (i, q) in qv.iter().enumerate() {
                let col = linear_action_on_q(q, &a);
                m.view_mut((i * block, c * n + r), (block, 1)).copy_from(&col.to_vector());
            }
        }
    }
    for i in 0..n {
        for r in 0..n {
            let mut w = DVector::zeros(n);
            w[r] = 1.0;
            m.view_mut((i * block, n * n + i * n + r), (block, 1))
                .copy_from(&make_q(&w).to_vector());
        }
    }
    m
}

/// Matrix of `L^Ψ_B`, shape `(n(n-1)/2) dim S^3 × n dim S^2`.
pub fn build_lpsi(basis: &BasisMatrix) -> Result<DMatrix<f64>> {
    let n = basis.dim();
    let in_block = coordinate_len(2, n);
    let out_block = coordinate_len(3, n);
    let pair_list = pairs(n);
    let mut m = DMatrix::zeros(pair_list.len() * out_block, n * in_block);
    let qv = basis.q_maps();
    for col_block in 0..n {
        for p in 0..in_block {
            let mut e = DVector::zeros(in_block);
            e[p] = 1.0;
            let unit = SymMultiMap::from_vector(2, n, &e)?;
            let col = col_block * in_block + p;
            // Only pairs containing `col_block` see this column.
            for (pi, &(i, j)) in pair_list.iter().enumerate() {
                let entry = if i == col_block {
                    bracket(&unit, &qv[j])?
                } else if j == col_block {
                    -bracket(&unit, &qv[i])?
                } else {
                    continue;
                };
                m.view_mut((pi * out_block, col), (out_block, 1)).copy_from(&entry.to_vector());
            }
        }
    }
    Ok(m)
}

/// The two operator matrices for a basis.
#[derive(Debug, Clone)]
pub struct DeformationOperators {
    pub basis: BasisMatrix,
    pub phi: DMatrix<f64>,
    pub psi: DMatrix<f64>,
}

impl DeformationOperators {
    pub fn new(basis: &BasisMatrix) -> Result<Self> {
        Ok(Self {
            basis: basis.clone(),
            phi: build_lphi(basis),
            psi: build_lpsi(basis)?,
        })
    }

    pub fn n(&self) -> usize {
        self.basis.dim()
    }

    /// `||L^Ψ L^Φ||_F / (||L^Ψ||_F ||L^Φ||_F)`.
    pub fn complex_residual(&self) -> f64 {
        complex_residual(&self.phi, &self.psi)
    }

    pub fn exactness(&self, tol: f64) -> Result<ExactnessReport> {
        exactness_from_matrices(self.n(), &self.phi, &self.psi, tol)
    }
}

pub fn complex_residual(phi: &DMatrix<f64>, psi: &DMatrix<f64>) -> f64 {
    (psi * phi).norm() / (psi.norm() * phi.norm())
}

/// Outcome of the exactness certification `Ker L^Ψ = Img L^Φ`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExactnessReport {
    pub n: usize,
    pub rank_phi: usize,
    pub nullity_psi: usize,
    /// `2 n^2 - rank L^Φ`.
    pub kernel_dim_phi: usize,
    /// Largest distance from a unit kernel vector of `L^Ψ` to `Img L^Φ`.
    pub max_subspace_residual: f64,
    /// `||L^Ψ L^Φ||_F / (||L^Ψ||_F ||L^Φ||_F)`.
    pub complex_residual: f64,
    pub tol: f64,
    pub exact: bool,
}

/// Certifies `Ker psi = Img phi`: equal dimensions by SVD rank, the kernel
/// inside the image by projection residual, and the image inside the kernel
/// by the product residual.
pub fn exactness_from_matrices(n: usize, phi: &DMatrix<f64>, psi: &DMatrix<f64>, tol: f64) -> Result<ExactnessReport> {
    let phi_svd = linalg::thin_svd(phi)?;
    let rank_phi = phi_svd.rank(tol);
    let image = phi_svd.u.columns(0, rank_phi).into_owned();
    let kernel = linalg::null_space(psi, tol)?;
    let nullity_psi = kernel.ncols();
    let max_subspace_residual = linalg::projection_residual(&image, &kernel);
    let complex_residual = complex_residual(phi, psi);
    Ok(ExactnessReport {
        n,
        rank_phi,
        nullity_psi,
        kernel_dim_phi: phi.ncols() - rank_phi,
        max_subspace_residual,
        complex_residual,
        tol,
        exact: rank_phi == nullity_psi && max_subspace_residual < tol && complex_residual < tol,
    })
}

pub fn exactness_report(basis: &BasisMatrix, tol: f64) -> Result<ExactnessReport> {
    DeformationOperators::new(basis)?.exactness(tol)
}
