//! Conformal classes of bases: `ρ_B` and `ρ_{B'}` are conjugate iff
//! `B' = c T B` with `c > 0` and `T` orthogonal.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{check_dim, Error, Result};
use crate::linalg;
use crate::symtensor::{make_q, BasisMatrix};

#[derive(Debug, Clone, Serialize)]
pub struct ConjugacyVerdict {
    pub conjugate: bool,
    pub c: f64,
    /// Row-major.
    pub t: Vec<Vec<f64>>,
    /// `||B' - c T B||_F / ||B'||_F`.
    pub residual: f64,
    /// `||A^T A - c^2 I||_F / c^2` for `A = B' B^-1`.
    pub deviation: f64,
}

impl ConjugacyVerdict {
    pub fn t_matrix(&self) -> DMatrix<f64> {
        let n = self.t.len();
        DMatrix::from_fn(n, n, |i, j| self.t[i][j])
    }
}

/// Orthogonal polar factor `U V^T` of `m = U Σ V^T`.
fn polar_factor(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let svd = linalg::thin_svd(m)?;
    Ok(&svd.u * svd.v.transpose())
}

/// Decides whether `bp = c T b`. The scale is `|det A|^{1/n}` and `T` is the
/// orthogonal polar factor of `A = bp b^-1`, which equals `A / c` whenever
/// the pair is conjugate.
pub fn classify_pair(b: &BasisMatrix, bp: &BasisMatrix, tol: f64) -> Result<ConjugacyVerdict> {
    check_dim(b.dim(), bp.dim())?;
    let n = b.dim();
    let a = bp.matrix() * b.inverse();
    let c = a.determinant().abs().powf(1.0 / n as f64);
    let c2 = c * c;
    let deviation = (a.transpose() * &a - DMatrix::identity(n, n) * c2).norm() / c2;
    let t = polar_factor(&a)?;
    let residual = (bp.matrix() - (&t * b.matrix()) * c).norm() / bp.matrix().norm();
    Ok(ConjugacyVerdict {
        conjugate: deviation <= tol,
        c,
        t: t.row_iter().map(|r| r.iter().copied().collect()).collect(),
        residual,
        deviation,
    })
}

/// `||A ∘ Q_v - Q_w ∘ (A, A)||` in coefficient norm.
pub fn conformal_commutation_residual(v: &DVector<f64>, w: &DVector<f64>, a: &DMatrix<f64>) -> Result<f64> {
    check_dim(v.len(), w.len())?;
    check_dim(v.len(), a.nrows())?;
    check_dim(v.len(), a.ncols())?;
    if v.norm() == 0.0 || w.norm() == 0.0 {
        return Err(Error::Precondition("v and w must be nonzero".into()));
    }
    let lhs = make_q(v).compose_output(a)?;
    let rhs = make_q(w).compose_inputs(a)?;
    Ok((lhs - rhs).coeff_norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::trial_rng;
    use crate::symtensor::random_basis;
    use proptest::prelude::*;
    use rand::Rng;

    fn rotation(n: usize, rng: &mut impl Rng) -> DMatrix<f64> {
        let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        polar_factor(&m).unwrap()
    }

    #[test]
    fn reflexive_case() {
        let b = random_basis(3, 2.0, 1e3, &mut trial_rng(1, 0));
        let v = classify_pair(&b, &b, 1e-9).unwrap();
        assert!(v.conjugate);
        assert!((v.c - 1.0).abs() < 1e-12);
        assert!((v.t_matrix() - DMatrix::identity(3, 3)).amax() < 1e-12);
    }

    #[test]
    fn scaled_rotation_is_recovered() {
        let mut rng = trial_rng(2, 0);
        let b = random_basis(3, 2.0, 1e3, &mut rng);
        let r = rotation(3, &mut rng);
        let bp = BasisMatrix::new(&r * b.matrix() * 2.0).unwrap();
        let v = classify_pair(&b, &bp, 1e-9).unwrap();
        assert!(v.conjugate);
        assert!((v.c - 2.0).abs() < 1e-12);
        assert!((v.t_matrix() - r).amax() < 1e-12);
        assert!(v.residual < 1e-14);
    }

    #[test]
    fn anisotropic_scaling_is_not_conjugate() {
        let b = BasisMatrix::identity(2);
        let bp = BasisMatrix::new(DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0]))).unwrap();
        let v = classify_pair(&b, &bp, 1e-6).unwrap();
        assert!(!v.conjugate);
        // The decision is stable across tolerance scales.
        for tol in [1e-9, 1e-3, 0.1] {
            assert!(!classify_pair(&b, &bp, tol).unwrap().conjugate);
        }
    }

    #[test]
    fn commutation_residual_cases() {
        let mut rng = trial_rng(3, 0);
        let v = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
        assert_eq!(conformal_commutation_residual(&v, &v, &DMatrix::identity(3, 3)).unwrap(), 0.0);
        let e1 = DVector::from_vec(vec![1.0, 0.0]);
        let r = conformal_commutation_residual(&e1, &(&e1 * 0.5), &(DMatrix::identity(2, 2) * 2.0)).unwrap();
        assert!(r < 1e-15);
        // Conformal A = cT with w = c^-1 T v commutes.
        let t = rotation(3, &mut rng);
        let a = &t * 1.7;
        let w = (&t * &v) / 1.7;
        assert!(conformal_commutation_residual(&v, &w, &a).unwrap() < 1e-14);
        assert!(matches!(
            conformal_commutation_residual(&DVector::zeros(3), &v, &a),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn non_conformal_a_leaves_a_residual() {
        let mut rng = trial_rng(4, 0);
        for _ in 0..50 {
            let n = 3;
            let a: DMatrix<f64> = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let c = a.determinant().abs().powf(1.0 / n as f64);
            if (a.transpose() * &a - DMatrix::identity(n, n) * (c * c)).norm() < 0.1 * c * c {
                continue;
            }
            let v = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            for lambda in [0.5, 1.0, 2.0] {
                let w = &a * &v * lambda;
                assert!(conformal_commutation_residual(&v, &w, &a).unwrap() > 1e-3);
            }
        }
    }

    fn basis_strategy(n: usize) -> impl Strategy<Value = BasisMatrix> {
        any::<u64>().prop_map(move |s| random_basis(n, 2.0, 1e2, &mut trial_rng(s, 0)))
    }

    fn conformal_strategy(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
        (any::<u64>(), 0.2f64..5.0).prop_map(move |(s, c)| rotation(n, &mut trial_rng(s, 1)) * c)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn classification_is_an_equivalence(b in basis_strategy(3), m1 in conformal_strategy(3), m2 in conformal_strategy(3), other in basis_strategy(3)) {
            let b1 = BasisMatrix::new(&m1 * b.matrix()).unwrap();
            let b2 = BasisMatrix::new(&m2 * b1.matrix()).unwrap();
            let tol = 1e-8;
            prop_assert!(classify_pair(&b, &b, tol).unwrap().conjugate);
            prop_assert!(classify_pair(&b, &b1, tol).unwrap().conjugate);
            prop_assert!(classify_pair(&b1, &b, tol).unwrap().conjugate);
            prop_assert!(classify_pair(&b1, &b2, tol).unwrap().conjugate);
            prop_assert!(classify_pair(&b, &b2, tol).unwrap().conjugate);
            let fwd = classify_pair(&b, &other, 1e-6).unwrap().conjugate;
            let back = classify_pair(&other, &b, 1e-6).unwrap().conjugate;
            prop_assert_eq!(fwd, back);
        }

        #[test]
        fn verdict_invariants(b in basis_strategy(2), m in conformal_strategy(2)) {
            let bp = BasisMatrix::new(&m * b.matrix()).unwrap();
            let v = classify_pair(&b, &bp, 1e-8).unwrap();
            prop_assert!(v.conjugate);
            let t = v.t_matrix();
            prop_assert!((t.transpose() * &t - DMatrix::identity(2, 2)).norm() <= 1e-10);
            prop_assert!(v.c > 0.0);
            let dist = (bp.matrix() - (&t * b.matrix()) * v.c).norm() / bp.matrix().norm();
            prop_assert!(dist <= v.residual + 1e-15);
        }
    }
}
