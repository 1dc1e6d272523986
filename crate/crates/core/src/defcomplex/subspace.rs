//! The complement `W` of `Img L^Φ_I` cut out by three families of linear
//! conditions on `(q_1, ..., q_n)`:
//!
//! * (diag)   `q_j(e_j, e_j) = 0` for every `j` (`n^2` scalar rows);
//! * (pair)   `<e_i, q_j(e_i, e_i)> + <e_j, q_i(e_j, e_j)> = 0` for `i < j`;
//! * (first)  `<e_1, q_1(e_j, e_j)> = 0` for `j >= 2`.
//!
//! The `i = j` case of the pair condition and the `j = 1` case of the first
//! condition follow from the diagonal rows and are not emitted, so the
//! constraint matrix has `n^2 + n(n-1)/2 + n - 1` independent rows.

use nalgebra::DMatrix;
use serde::Serialize;

use super::{apply_lphi, build_lphi, build_lpsi, join_tuple};
use crate::error::{check_dim, Error, Result};
use crate::linalg;
use crate::symtensor::{coordinate_len, BasisMatrix, MultiIndexSpace, SymMultiMap};

/// Flat index of `<e_c, q_j(e_a, e_b)>` in `S^2(R^n)^n`.
fn q_coord(n: usize, j: usize, c: usize, a: usize, b: usize) -> usize {
    let space = MultiIndexSpace::get(n, 2);
    j * n * space.len() + c * space.len() + space.position(&[a, b])
}

/// The subspace `W` as the null space of a constraint matrix.
#[derive(Debug, Clone)]
pub struct SubspaceW {
    n: usize,
    constraints: DMatrix<f64>,
    labels: Vec<String>,
}

impl SubspaceW {
    pub fn new(n: usize) -> Self {
        let dim = n * coordinate_len(2, n);
        let mut rows: Vec<(String, Vec<(usize, f64)>)> = Vec::new();
        for j in 0..n {
            for c in 0..n {
                rows.push((format!("diag j={} c={}", j + 1, c + 1), vec![(q_coord(n, j, c, j, j), 1.0)]));
            }
        }
        for i in 0..n {
            for j in i + 1..n {
                rows.push((
                    format!("pair i={} j={}", i + 1, j + 1),
                    vec![(q_coord(n, j, i, i, i), 1.0), (q_coord(n, i, j, j, j), 1.0)],
                ));
            }
        }
        for j in 1..n {
            rows.push((format!("first j={}", j + 1), vec![(q_coord(n, 0, 0, j, j), 1.0)]));
        }
        let mut constraints = DMatrix::zeros(rows.len(), dim);
        let mut labels = Vec::with_capacity(rows.len());
        for (r, (label, entries)) in rows.into_iter().enumerate() {
            for (col, v) in entries {
                constraints[(r, col)] += v;
            }
            labels.push(label);
        }
        Self { n, constraints, labels }
    }

    /// The whole space (no constraints), as a degenerate control.
    pub fn full_space(n: usize) -> Self {
        Self {
            n,
            constraints: DMatrix::zeros(0, n * coordinate_len(2, n)),
            labels: Vec::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn constraint_matrix(&self) -> &DMatrix<f64> {
        &self.constraints
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn row_count(&self) -> usize {
        self.constraints.nrows()
    }

    /// Constraint rows scaled to unit norm.
    pub fn normalized_constraints(&self) -> DMatrix<f64> {
        let mut c = self.constraints.clone();
        for mut row in c.row_iter_mut() {
            let norm = row.norm();
            if norm > 0.0 {
                row /= norm;
            }
        }
        c
    }

    /// Largest absolute constraint value on a tuple.
    pub fn violation(&self, q: &[SymMultiMap]) -> Result<f64> {
        let v = join_tuple(q);
        check_dim(self.constraints.ncols(), v.len())?;
        Ok((&self.constraints * v).amax())
    }

    /// Orthonormal basis of `W`.
    pub fn basis(&self) -> Result<DMatrix<f64>> {
        if self.constraints.nrows() == 0 {
            let d = self.constraints.ncols();
            return Ok(DMatrix::identity(d, d));
        }
        linalg::null_space(&self.constraints, 1e-12)
    }
}

/// `(A, B')` with `q - L^Φ_I(A, B') ∈ W`, from the explicit formulas in
/// `s_ij = <e_i, q_j(e_j, e_j)>`, `t_ij = <e_j, q_i(e_j, e_j)>`,
/// `u_j = <e_1, q_1(e_j, e_j)>`.
pub fn project_to_w(q: &[SymMultiMap]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = q.len();
    for qi in q {
        if qi.order() != 2 {
            return Err(Error::Contract("project_to_w needs order-2 maps".into()));
        }
        check_dim(n, qi.dim())?;
    }
    let s = |i: usize, j: usize| q[j].coeff(i, &[j, j]);
    let t = |i: usize, j: usize| q[i].coeff(j, &[j, j]);
    let u = |j: usize| q[0].coeff(0, &[j, j]);
    let mut a = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, n);
    a[(0, 0)] = s(0, 0) / 2.0;
    b[(0, 0)] = -s(0, 0) / 2.0;
    for j in 1..n {
        a[(j, j)] = -u(j) / 2.0;
        b[(j, j)] = -s(j, j) - u(j) / 2.0;
    }
    for i in 0..n {
        for j in 0..n {
            if i != j {
                a[(i, j)] = (s(i, j) + t(i, j)) / 4.0;
                b[(i, j)] = (3.0 * s(i, j) - t(i, j)) / 4.0;
            }
        }
    }
    Ok((a, b))
}

/// `q - L^Φ_I(project_to_w(q))`.
pub fn w_remainder(q: &[SymMultiMap]) -> Result<Vec<SymMultiMap>> {
    let (a, b) = project_to_w(q)?;
    let image = apply_lphi(&BasisMatrix::identity(q.len()), &a, &b);
    Ok(q.iter().zip(&image).map(|(x, y)| x - y).collect())
}

/// Matrix of the right action `(q · A)_i = Σ_k A[k, i] q_k` on flattened
/// tuples whose blocks have length `block`.
pub fn right_action_matrix(a: &DMatrix<f64>, block: usize) -> DMatrix<f64> {
    a.transpose().kronecker(&DMatrix::identity(block, block))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransversalityReport {
    pub n: usize,
    pub kernel_dim: usize,
    pub constraint_rows: usize,
    /// Smallest singular value of (unit constraint rows) × (orthonormal
    /// kernel basis); zero when there are fewer rows than kernel vectors.
    pub sigma_min_intersection: f64,
    pub kernel_meets_w: bool,
    pub sum_rank: usize,
    pub total_dim: usize,
    pub sum_spans: bool,
}

/// Checks `Ker L^Ψ ∩ W = {0}` and `W + Img L^Φ = S^2(R^n)^n`, after moving
/// the kernel and image of a general basis back to the identity basis by
/// the right action of `B^-1`.
pub fn verify_transversality(basis: &BasisMatrix, w: &SubspaceW, tol: f64) -> Result<TransversalityReport> {
    let n = basis.dim();
    check_dim(n, w.n())?;
    let block = coordinate_len(2, n);
    let to_identity = right_action_matrix(&basis.inverse(), block);
    let psi = build_lpsi(basis)?;
    let kernel = linalg::null_space(&psi, super::RANK_TOL)?;
    let kernel_i = linalg::column_space(&(&to_identity * kernel), 1e-12)?;
    let phi = build_lphi(basis);
    let image = linalg::column_space(&phi, super::RANK_TOL)?;
    let image_i = &to_identity * image;

    let c = w.normalized_constraints();
    let system = &c * &kernel_i;
    let sigma_min_intersection = if system.ncols() == 0 {
        f64::INFINITY
    } else if system.nrows() < system.ncols() {
        0.0
    } else {
        linalg::singular_values(&system)?.last().copied().unwrap_or(0.0)
    };

    let wb = w.basis()?;
    let mut stacked = DMatrix::zeros(wb.nrows(), wb.ncols() + image_i.ncols());
    stacked.columns_mut(0, wb.ncols()).copy_from(&wb);
    stacked.columns_mut(wb.ncols(), image_i.ncols()).copy_from(&image_i);
    let sum_rank = linalg::rank(&stacked, super::RANK_TOL)?;
    let total_dim = n * block;

    Ok(TransversalityReport {
        n,
        kernel_dim: kernel_i.ncols(),
        constraint_rows: w.row_count(),
        sigma_min_intersection,
        kernel_meets_w: sigma_min_intersection <= tol,
        sum_rank,
        total_dim,
        sum_spans: sum_rank == total_dim,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChangeBasisReport {
    pub kernel_dim: usize,
    pub transported_dim: usize,
    /// Sine of the largest principal angle between `Ker_B · A` and
    /// `Ker_{B A}`.
    pub max_angle_sine: f64,
    pub consistent: bool,
}

/// Checks `Ker L^Ψ_{B'} = Ker L^Ψ_B · A` for `B' = B A`.
pub fn change_basis_kernel(b: &BasisMatrix, bp: &BasisMatrix, a: &DMatrix<f64>, tol: f64) -> Result<ChangeBasisReport> {
    let n = b.dim();
    check_dim(n, bp.dim())?;
    let predicted = b.matrix() * a;
    let scale = bp.matrix().norm().max(1.0);
    if (bp.matrix() - &predicted).norm() > 1e-10 * scale {
        return Err(Error::Precondition("B' differs from B A".into()));
    }
    let block = coordinate_len(2, n);
    let kb = linalg::null_space(&build_lpsi(b)?, super::RANK_TOL)?;
    let kbp = linalg::null_space(&build_lpsi(bp)?, super::RANK_TOL)?;
    let moved = linalg::column_space(&(right_action_matrix(a, block) * kb), 1e-12)?;
    let max_angle_sine = linalg::max_principal_angle_sine(&moved, &kbp)?;
    Ok(ChangeBasisReport {
        kernel_dim: kbp.ncols(),
        transported_dim: moved.ncols(),
        max_angle_sine,
        consistent: moved.ncols() == kbp.ncols() && max_angle_sine < tol,
    })
}

/// `q · A` on a tuple.
pub fn right_action(q: &[SymMultiMap], a: &DMatrix<f64>) -> Vec<SymMultiMap> {
    (0..q.len())
        .map(|i| {
            let mut acc = SymMultiMap::zeros(q[0].dim(), q[0].order());
            for (k, qk) in q.iter().enumerate() {
                acc = acc + qk.scaled(a[(k, i)]);
            }
            acc
        })
        .collect()
}
