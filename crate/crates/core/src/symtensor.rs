//! Symmetric multilinear maps `S^r(R^n) = {F : (R^n)^r -> R^n symmetric}` for
//! `r <= 3`, stored in packed form.
//!
//! A map is stored by its values on sorted basis tuples: for an output
//! coordinate `c` and a non-decreasing multi-index `i_1 <= ... <= i_r`, the
//! coefficient is `<e_c, F(e_{i_1}, ..., e_{i_r})>`. Multi-indices are ordered
//! lexicographically and the flat coordinate vector is output-coordinate
//! major, multi-index minor:
//!
//! ```text
//! position(c, idx) = c * C(n + r - 1, r) + rank_lex(idx)
//! ```
//!
//! The flattening is unweighted, so `to_vector` is an isometry between the
//! packed coefficients and `R^{n C(n+r-1, r)}`. Every matrix assembled in
//! [`crate::defcomplex`] uses this same convention.

use std::collections::HashMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Highest supported order.
pub const MAX_ORDER: usize = 3;

/// Default relative tolerance for coefficient comparisons.
pub const COEFF_TOL: f64 = 1e-10;

/// Sorted multi-indices of a fixed length over `0..dim`, with a lookup table
/// from arbitrary ordered tuples to packed positions.
#[derive(Debug)]
pub struct MultiIndexSpace {
    dim: usize,
    order: usize,
    indices: Vec<Vec<usize>>,
    lookup: Vec<usize>,
    multiplicity: Vec<f64>,
}

impl MultiIndexSpace {
    fn build(dim: usize, order: usize) -> Self {
        let mut indices = Vec::new();
        let mut current = vec![0usize; order];
        fn rec(pos: usize, start: usize, dim: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if pos == cur.len() {
                out.push(cur.clone());
                return;
            }
            for i in start..dim {
                cur[pos] = i;
                rec(pos + 1, i, dim, cur, out);
            }
        }
        rec(0, 0, dim, &mut current, &mut indices);

        let tuples = dim.pow(order as u32);
        let mut lookup = vec![0usize; tuples];
        let position: HashMap<Vec<usize>, usize> =
            indices.iter().enumerate().map(|(p, idx)| (idx.clone(), p)).collect();
        for (t, slot) in lookup.iter_mut().enumerate() {
            let mut tuple = decode_tuple(t, dim, order);
            tuple.sort_unstable();
            *slot = position[&tuple];
        }

        let multiplicity = indices
            .iter()
            .map(|idx| {
                let mut m = factorial(order);
                let mut run = 1;
                for w in 1..=idx.len() {
                    if w < idx.len() && idx[w] == idx[w - 1] {
                        run += 1;
                    } else {
                        m /= factorial(run);
                        run = 1;
                    }
                }
                m as f64
            })
            .collect();

        Self {
            dim,
            order,
            indices,
            lookup,
            multiplicity,
        }
    }

    /// Shared instance for `(dim, order)`.
    pub fn get(dim: usize, order: usize) -> Arc<Self> {
        static CACHE: OnceLock<Mutex<HashMap<(usize, usize), Arc<MultiIndexSpace>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = cache.lock().expect("multi-index cache poisoned");
        guard
            .entry((dim, order))
            .or_insert_with(|| Arc::new(Self::build(dim, order)))
            .clone()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Number of sorted multi-indices, `C(n + r - 1, r)`.
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[Vec<usize>] {
        &self.indices
    }

    /// Packed position of an arbitrary (unsorted) tuple.
    pub fn position(&self, tuple: &[usize]) -> usize {
        self.lookup[encode_tuple(tuple, self.dim)]
    }

    /// Number of ordered tuples that sort to the multi-index at `p`.
    pub fn multiplicity(&self, p: usize) -> f64 {
        self.multiplicity[p]
    }
}

fn factorial(k: usize) -> usize {
    (1..=k).product()
}

fn encode_tuple(tuple: &[usize], dim: usize) -> usize {
    tuple.iter().fold(0, |acc, &i| acc * dim + i)
}

fn decode_tuple(mut t: usize, dim: usize, order: usize) -> Vec<usize> {
    let mut out = vec![0; order];
    for slot in out.iter_mut().rev() {
        *slot = t % dim;
        t /= dim;
    }
    out
}

fn permutations(idx: &[usize]) -> Vec<Vec<usize>> {
    match idx.len() {
        0 => vec![vec![]],
        1 => vec![idx.to_vec()],
        2 => vec![vec![idx[0], idx[1]], vec![idx[1], idx[0]]],
        3 => {
            let (a, b, c) = (idx[0], idx[1], idx[2]);
            vec![
                vec![a, b, c],
                vec![a, c, b],
                vec![b, a, c],
                vec![b, c, a],
                vec![c, a, b],
                vec![c, b, a],
            ]
        }
        _ => unreachable!("orders above 3 are not supported"),
    }
}

/// Symmetric `r`-multilinear map `(R^n)^r -> R^n` in packed form.
#[derive(Clone)]
pub struct SymMultiMap {
    space: Arc<MultiIndexSpace>,
    coeffs: Vec<f64>,
}

impl fmt::Debug for SymMultiMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SymMultiMap")
            .field("order", &self.order())
            .field("dim", &self.dim())
            .field("coeffs", &self.coeffs)
            .finish()
    }
}

impl PartialEq for SymMultiMap {
    fn eq(&self, other: &Self) -> bool {
        self.dim() == other.dim() && self.order() == other.order() && self.coeffs == other.coeffs
    }
}

/// Length of the flat coordinate vector of `S^r(R^n)`: `n * C(n + r - 1, r)`.
pub fn coordinate_len(order: usize, dim: usize) -> usize {
    dim * MultiIndexSpace::get(dim, order).len()
}

impl SymMultiMap {
    /// # Panics
    /// If `order` is 0 or above [`MAX_ORDER`], or `dim` is 0.
    pub fn zeros(dim: usize, order: usize) -> Self {
        assert!((1..=MAX_ORDER).contains(&order), "order must be in 1..=3");
        assert!(dim >= 1, "dimension must be positive");
        let space = MultiIndexSpace::get(dim, order);
        let coeffs = vec![0.0; dim * space.len()];
        Self { space, coeffs }
    }

    /// Builds a map from its values on sorted basis tuples. `f` is called
    /// once per multi-index and must return a vector of length `dim`.
    pub fn from_basis_fn(dim: usize, order: usize, mut f: impl FnMut(&[usize]) -> DVector<f64>) -> Self {
        let mut out = Self::zeros(dim, order);
        let len = out.space.len();
        for p in 0..len {
            let val = f(&out.space.indices[p].clone());
            for c in 0..dim {
                out.coeffs[c * len + p] = val[c];
            }
        }
        out
    }

    /// Symmetrization of a (possibly non-symmetric) multilinear map given by
    /// its values on ordered basis tuples: each packed coefficient is the
    /// average of `f` over all orderings of the multi-index.
    pub fn symmetrized(dim: usize, order: usize, mut f: impl FnMut(&[usize]) -> DVector<f64>) -> Self {
        Self::from_basis_fn(dim, order, |idx| {
            let perms = permutations(idx);
            let count = perms.len() as f64;
            let mut acc = DVector::zeros(dim);
            for p in &perms {
                acc += f(p);
            }
            acc / count
        })
    }

    /// Order-1 map with the same action as the matrix.
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let n = m.nrows();
        assert_eq!(n, m.ncols(), "matrix must be square");
        Self::from_basis_fn(n, 1, |idx| m.column(idx[0]).into_owned())
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_matrix(&DMatrix::identity(dim, dim))
    }

    /// Matrix of an order-1 map.
    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        if self.order() != 1 {
            return Err(Error::Contract(format!("to_matrix needs order 1, got {}", self.order())));
        }
        let n = self.dim();
        Ok(DMatrix::from_fn(n, n, |c, j| self.coeffs[c * n + j]))
    }

    pub fn from_vector(order: usize, dim: usize, v: &DVector<f64>) -> Result<Self> {
        if !(1..=MAX_ORDER).contains(&order) || dim == 0 {
            return Err(Error::Contract(format!("unsupported order {order} or dim {dim}")));
        }
        let mut out = Self::zeros(dim, order);
        check_dim(out.coeffs.len(), v.len())?;
        out.coeffs.copy_from_slice(v.as_slice());
        Ok(out)
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.coeffs)
    }

    pub fn order(&self) -> usize {
        self.space.order
    }

    pub fn dim(&self) -> usize {
        self.space.dim
    }

    pub fn space(&self) -> &MultiIndexSpace {
        &self.space
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// `<e_out, F(e_{idx_1}, ..., e_{idx_r})>` for any ordering of `idx`.
    pub fn coeff(&self, out: usize, idx: &[usize]) -> f64 {
        self.coeffs[out * self.space.len() + self.space.position(idx)]
    }

    pub fn set_coeff(&mut self, out: usize, idx: &[usize], value: f64) {
        let len = self.space.len();
        let p = self.space.position(idx);
        self.coeffs[out * len + p] = value;
    }

    /// `F(e_{idx_1}, ..., e_{idx_r})`.
    pub fn value_at(&self, idx: &[usize]) -> DVector<f64> {
        let len = self.space.len();
        let p = self.space.position(idx);
        DVector::from_fn(self.dim(), |c, _| self.coeffs[c * len + p])
    }

    /// Multilinear evaluation `F(args[0], ..., args[r-1])`.
    pub fn eval(&self, args: &[&DVector<f64>]) -> Result<DVector<f64>> {
        if args.len() != self.order() {
            return Err(Error::ArityMismatch {
                order: self.order(),
                got: args.len(),
            });
        }
        for a in args {
            check_dim(self.dim(), a.len())?;
        }
        Ok(self.eval_unchecked(args))
    }

    fn eval_unchecked(&self, args: &[&DVector<f64>]) -> DVector<f64> {
        let n = self.dim();
        let len = self.space.len();
        let mut out = DVector::zeros(n);
        let mut accumulate = |p: usize, w: f64| {
            if w != 0.0 {
                for c in 0..n {
                    out[c] += w * self.coeffs[c * len + p];
                }
            }
        };
        match self.order() {
            1 => {
                for i in 0..n {
                    accumulate(self.space.lookup[i], args[0][i]);
                }
            }
            2 => {
                for i in 0..n {
                    for j in 0..n {
                        accumulate(self.space.lookup[i * n + j], args[0][i] * args[1][j]);
                    }
                }
            }
            _ => {
                for i in 0..n {
                    for j in 0..n {
                        let wij = args[0][i] * args[1][j];
                        for k in 0..n {
                            accumulate(self.space.lookup[(i * n + j) * n + k], wij * args[2][k]);
                        }
                    }
                }
            }
        }
        out
    }

    /// Diagonal evaluation `F(x, ..., x)`.
    pub fn eval_diag(&self, x: &DVector<f64>) -> DVector<f64> {
        let args: Vec<&DVector<f64>> = std::iter::repeat_n(x, self.order()).collect();
        self.eval_unchecked(&args)
    }

    /// `F(e_a, w)` for an order-2 map.
    pub fn apply_first(&self, a: usize, w: &DVector<f64>) -> DVector<f64> {
        debug_assert_eq!(self.order(), 2);
        let n = self.dim();
        let len = self.space.len();
        let mut out = DVector::zeros(n);
        for j in 0..n {
            let wj = w[j];
            if wj == 0.0 {
                continue;
            }
            let p = self.space.lookup[a * n + j];
            for c in 0..n {
                out[c] += wj * self.coeffs[c * len + p];
            }
        }
        out
    }

    /// `A ∘ F`.
    pub fn compose_output(&self, a: &DMatrix<f64>) -> Result<Self> {
        check_dim(self.dim(), a.ncols())?;
        check_dim(self.dim(), a.nrows())?;
        Ok(Self::from_basis_fn(self.dim(), self.order(), |idx| a * self.value_at(idx)))
    }

    /// `F ∘ (A, ..., A)`.
    pub fn compose_inputs(&self, a: &DMatrix<f64>) -> Result<Self> {
        check_dim(self.dim(), a.ncols())?;
        check_dim(self.dim(), a.nrows())?;
        let cols: Vec<DVector<f64>> = (0..self.dim()).map(|j| a.column(j).into_owned()).collect();
        Ok(Self::from_basis_fn(self.dim(), self.order(), |idx| {
            let args: Vec<&DVector<f64>> = idx.iter().map(|&i| &cols[i]).collect();
            self.eval_unchecked(&args)
        }))
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            space: self.space.clone(),
            coeffs: self.coeffs.iter().map(|c| c * s).collect(),
        }
    }

    fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        assert!(
            self.dim() == other.dim() && self.order() == other.order(),
            "shape mismatch: ({}, {}) vs ({}, {})",
            self.order(),
            self.dim(),
            other.order(),
            other.dim()
        );
        Self {
            space: self.space.clone(),
            coeffs: self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| f(*a, *b)).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |m, c| m.max(c.abs()))
    }

    /// Euclidean norm of the packed coefficient vector.
    pub fn coeff_norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    /// Frobenius norm of the full (unpacked) tensor, counting every ordered
    /// tuple. Upper bound for the operator norm.
    pub fn frobenius_norm(&self) -> f64 {
        let len = self.space.len();
        let mut acc = 0.0;
        for c in 0..self.dim() {
            for p in 0..len {
                let v = self.coeffs[c * len + p];
                acc += self.space.multiplicity[p] * v * v;
            }
        }
        acc.sqrt()
    }

    /// Largest coefficient difference.
    pub fn max_diff(&self, other: &Self) -> f64 {
        (self - other).max_abs()
    }

    /// Coefficient-wise comparison with tolerance relative to the larger
    /// coefficient magnitude of the two maps.
    pub fn approx_eq(&self, other: &Self, rel_tol: f64) -> bool {
        if self.dim() != other.dim() || self.order() != other.order() {
            return false;
        }
        let scale = self.max_abs().max(other.max_abs());
        self.max_diff(other) <= rel_tol * scale
    }

    /// Operator norm `sup ||F(x_1..x_r)||` over unit vectors.
    pub fn op_norm(&self, mode: NormMode) -> Result<NormBound> {
        match mode {
            NormMode::Exact => {
                if self.order() != 1 {
                    return Err(Error::Unsupported(format!(
                        "exact operator norm is only available for order 1, got order {}",
                        self.order()
                    )));
                }
                let s = crate::linalg::spectral_norm(&self.to_matrix()?);
                Ok(NormBound { lower: s, upper: s })
            }
            NormMode::Sampled { samples, seed } => {
                let n = self.dim();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut lower: f64 = 0.0;
                let basis: Vec<DVector<f64>> = (0..n).map(|i| DVector::from_fn(n, |j, _| (i == j) as u8 as f64)).collect();
                for idx in self.space.indices.clone() {
                    let args: Vec<&DVector<f64>> = idx.iter().map(|&i| &basis[i]).collect();
                    lower = lower.max(self.eval_unchecked(&args).norm());
                }
                for _ in 0..samples {
                    let args: Vec<DVector<f64>> = (0..self.order()).map(|_| random_unit(n, &mut rng)).collect();
                    let refs: Vec<&DVector<f64>> = args.iter().collect();
                    lower = lower.max(self.eval_unchecked(&refs).norm());
                    lower = lower.max(self.eval_diag(&args[0]).norm());
                }
                let upper = if self.order() == 1 {
                    crate::linalg::spectral_norm(&self.to_matrix()?)
                } else {
                    self.frobenius_norm()
                };
                Ok(NormBound {
                    lower: lower.min(upper),
                    upper,
                })
            }
        }
    }
}

pub(crate) fn random_unit(n: usize, rng: &mut impl Rng) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = v.norm();
        if norm > 1e-8 {
            return v / norm;
        }
    }
}

impl Add for &SymMultiMap {
    type Output = SymMultiMap;
    fn add(self, rhs: Self) -> SymMultiMap {
        self.zip_with(rhs, |a, b| a + b)
    }
}

impl Sub for &SymMultiMap {
    type Output = SymMultiMap;
    fn sub(self, rhs: Self) -> SymMultiMap {
        self.zip_with(rhs, |a, b| a - b)
    }
}

impl Add for SymMultiMap {
    type Output = SymMultiMap;
    fn add(self, rhs: Self) -> SymMultiMap {
        &self + &rhs
    }
}

impl Sub for SymMultiMap {
    type Output = SymMultiMap;
    fn sub(self, rhs: Self) -> SymMultiMap {
        &self - &rhs
    }
}

impl Neg for &SymMultiMap {
    type Output = SymMultiMap;
    fn neg(self) -> SymMultiMap {
        self.scaled(-1.0)
    }
}

impl Neg for SymMultiMap {
    type Output = SymMultiMap;
    fn neg(self) -> SymMultiMap {
        self.scaled(-1.0)
    }
}

impl Mul<f64> for &SymMultiMap {
    type Output = SymMultiMap;
    fn mul(self, rhs: f64) -> SymMultiMap {
        self.scaled(rhs)
    }
}

impl Mul<f64> for SymMultiMap {
    type Output = SymMultiMap;
    fn mul(self, rhs: f64) -> SymMultiMap {
        self.scaled(rhs)
    }
}

/// How to evaluate [`SymMultiMap::op_norm`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormMode {
    /// Largest singular value; order 1 only.
    Exact,
    /// Lower bound from basis tuples plus `samples` random unit tuples,
    /// upper bound from the full Frobenius norm.
    Sampled { samples: usize, seed: u64 },
}

impl NormMode {
    pub fn sampled() -> Self {
        NormMode::Sampled { samples: 2000, seed: 0x5eed }
    }
}

/// Enclosure `lower <= ||F|| <= upper`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormBound {
    pub lower: f64,
    pub upper: f64,
}

impl NormBound {
    pub fn exact(v: f64) -> Self {
        Self { lower: v, upper: v }
    }

    pub fn contains(&self, v: f64, slack: f64) -> bool {
        self.lower - slack <= v && v <= self.upper + slack
    }
}

impl Add for NormBound {
    type Output = NormBound;
    fn add(self, rhs: Self) -> NormBound {
        NormBound {
            lower: self.lower + rhs.lower,
            upper: self.upper + rhs.upper,
        }
    }
}

/// `Q_v(x, y) = <x, y> v - <x, v> y - <y, v> x`.
pub fn make_q(v: &DVector<f64>) -> SymMultiMap {
    let n = v.len();
    SymMultiMap::from_basis_fn(n, 2, |idx| {
        let (a, b) = (idx[0], idx[1]);
        let mut out = if a == b { v.clone() } else { DVector::zeros(n) };
        out[b] -= v[a];
        out[a] -= v[b];
        out
    })
}

/// `[Q, Q'](x, y, z) = Σ_cyc Q(x, Q'(y, z)) - Q'(x, Q(y, z))`.
pub fn bracket(q: &SymMultiMap, qp: &SymMultiMap) -> Result<SymMultiMap> {
    if q.order() != 2 || qp.order() != 2 {
        return Err(Error::Contract("bracket needs two order-2 maps".into()));
    }
    check_dim(q.dim(), qp.dim())?;
    let n = q.dim();
    Ok(SymMultiMap::from_basis_fn(n, 3, |idx| {
        let (a, b, c) = (idx[0], idx[1], idx[2]);
        let mut out = DVector::zeros(n);
        for (x, y, z) in [(a, b, c), (b, c, a), (c, a, b)] {
            out += q.apply_first(x, &qp.value_at(&[y, z]));
            out -= qp.apply_first(x, &q.value_at(&[y, z]));
        }
        out
    }))
}

/// An ordered basis `B = (v_1, ..., v_n)` of `R^n`, stored as the columns of
/// an invertible matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisMatrix {
    matrix: DMatrix<f64>,
}

/// Default lower bound on the smallest singular value of a basis.
pub const BASIS_TOL: f64 = 1e-10;

impl BasisMatrix {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        Self::with_tolerance(matrix, BASIS_TOL)
    }

    pub fn with_tolerance(matrix: DMatrix<f64>, tol: f64) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() || matrix.nrows() == 0 {
            return Err(Error::Contract(format!(
                "basis must be a non-empty square matrix, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if matrix.iter().any(|x| !x.is_finite()) {
            return Err(Error::Contract("basis has non-finite entries".into()));
        }
        let smin = matrix.clone().singular_values().min();
        if smin <= tol {
            return Err(Error::Singular(format!("smallest singular value {smin:.3e} <= {tol:.1e}")));
        }
        Ok(Self { matrix })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            matrix: DMatrix::identity(n, n),
        }
    }

    /// Builds a basis from its vectors `v_1, ..., v_n`.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let n = columns.len();
        for c in columns {
            check_dim(n, c.len())?;
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| columns[j][i]))
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// The basis vector `v_i` (0-based).
    pub fn vector(&self, i: usize) -> DVector<f64> {
        self.matrix.column(i).into_owned()
    }

    pub fn columns(&self) -> Vec<Vec<f64>> {
        self.matrix.column_iter().map(|c| c.iter().copied().collect()).collect()
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.matrix.clone().try_inverse().expect("basis is invertible by construction")
    }

    pub fn max_vector_norm(&self) -> f64 {
        self.matrix.column_iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// `(Q_{v_1}, ..., Q_{v_n})`.
    pub fn q_maps(&self) -> Vec<SymMultiMap> {
        (0..self.dim()).map(|i| make_q(&self.vector(i))).collect()
    }
}

/// Uniform random basis with entries in `[-half_width, half_width]` and
/// spectral condition number at most `max_cond`.
pub fn random_basis(n: usize, half_width: f64, max_cond: f64, rng: &mut impl Rng) -> BasisMatrix {
    loop {
        let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-half_width..half_width));
        if crate::linalg::condition_number(&m) <= max_cond {
            if let Ok(b) = BasisMatrix::new(m) {
                return b;
            }
        }
    }
}
