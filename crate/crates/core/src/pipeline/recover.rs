//! Recovery of the basis `B''` of a perturbed action from its jets at the
//! fixed point.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::defcomplex::{join_tuple, linear_action_on_q};
use crate::error::{Error, Result};
use crate::jets::Jet3;
use crate::linalg;
use crate::symtensor::{coordinate_len, make_q, BasisMatrix, SymMultiMap};

use super::fixed_point::FixedPointJets;

/// Largest admissible relative residual of the fit `Q_{w_i} ≈ θ_i`.
pub const RECOVERY_TOL: f64 = 1e-6;

const MAX_NEWTON_STEPS: usize = 50;

/// Relative singular-value cutoff in the Gauss-Newton solve.
const GAUGE_CUTOFF: f64 = 1e-7;

#[derive(Debug, Clone)]
pub struct Recovery {
    pub basis: BasisMatrix,
    /// Linearizer of the `a`-jet.
    pub linearizer: Jet3,
    /// Linear change of chart `N` with `N θ_i(N^-1, N^-1) = Q_{w_i}`.
    pub normalization: DMatrix<f64>,
    pub stats: RecoveryStats,
}

#[derive(Debug, Clone, Serialize)]
pub struct RecoveryStats {
    /// Relative residual of the plain least-squares fit before
    /// normalization.
    pub initial_residual: f64,
    /// Relative residual after normalization.
    pub residual: f64,
    pub newton_steps: usize,
    /// `||N^T N - I||`, with `N` scaled to `|det N| = 1`.
    pub normalization_deviation: f64,
}

/// Columns `Q_{e_j}` as coordinate vectors.
fn q_matrix(n: usize) -> DMatrix<f64> {
    let len = coordinate_len(2, n);
    let mut m = DMatrix::zeros(len, n);
    for j in 0..n {
        let mut e = DVector::zeros(n);
        e[j] = 1.0;
        m.set_column(j, &make_q(&e).to_vector());
    }
    m
}

/// Least-squares `w` with `Q_w ≈ q`.
pub fn fit_q(q: &SymMultiMap) -> Result<DVector<f64>> {
    linalg::lstsq(&q_matrix(q.dim()), &q.to_vector(), 1e-12)
}

fn residual_blocks(thetas: &[SymMultiMap], w: &DMatrix<f64>) -> Vec<SymMultiMap> {
    thetas
        .iter()
        .enumerate()
        .map(|(i, t)| t - &make_q(&w.column(i).into_owned()))
        .collect()
}

fn transform(theta: &SymMultiMap, n_mat: &DMatrix<f64>, n_inv: &DMatrix<f64>) -> Result<SymMultiMap> {
    theta.compose_inputs(n_inv)?.compose_output(n_mat)
}

/// Recovers `B''` from jets at the fixed point.
///
/// The `a`-jet is linearized to `k^-1 I` and the `b_i`-jets are conjugated by
/// the linearizer. Their quadratic parts `θ_i` are then fitted by `Q_{w_i}`
/// after a Gauss-Newton search for a linear change of chart `N` making every
/// `N θ_i(N^-1, N^-1)` exactly of the form `Q_w`; the linear part of the
/// chart at the fixed point is arbitrary, so `θ_i` is in general only
/// `GL(n)`-conjugate to such a form.
pub fn recover_basis(jets: &FixedPointJets) -> Result<Recovery> {
    let linearizer = jets.a.linearize()?;
    let thetas = jets
        .b
        .iter()
        .map(|g| g.conjugate(&linearizer)?.theta_with_tol(1e-9))
        .collect::<Result<Vec<_>>>()?;
    recover_from_thetas(&thetas).map(|(basis, normalization, stats)| Recovery {
        basis,
        linearizer,
        normalization,
        stats,
    })
}

/// Normalizes and fits quadratic parts `θ_i`; see [`recover_basis`].
pub fn recover_from_thetas(thetas: &[SymMultiMap]) -> Result<(BasisMatrix, DMatrix<f64>, RecoveryStats)> {
    let n = thetas.len();
    if n == 0 || thetas.iter().any(|t| t.dim() != n || t.order() != 2) {
        return Err(Error::Contract("expected n quadratic maps on R^n".into()));
    }
    let scale = join_tuple(thetas).norm();
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::Singular("all quadratic parts vanish".into()));
    }
    let qm = q_matrix(n);
    let len = qm.nrows();
    let mut w = DMatrix::zeros(n, n);
    for (i, t) in thetas.iter().enumerate() {
        w.set_column(i, &linalg::lstsq(&qm, &t.to_vector(), 1e-12)?);
    }
    let initial = join_tuple(&residual_blocks(thetas, &w)).norm() / scale;

    // The scalar gauge N -> λN rescales the whole tuple, so N is kept at
    // |det N| = 1 and residuals are measured against the current tuple.
    let rel = |blocks: &[SymMultiMap], w: &DMatrix<f64>| {
        join_tuple(&residual_blocks(blocks, w)).norm() / join_tuple(blocks).norm()
    };
    let mut n_mat = DMatrix::<f64>::identity(n, n);
    let mut current: Vec<SymMultiMap> = thetas.to_vec();
    let mut res = initial;
    let mut steps = 0;
    'newton: while res > 1e-15 && steps < MAX_NEWTON_STEPS {
        // Unknowns: X (column-major, n^2) and δW (column-major, n^2);
        // linearized residual M_i + X·M_i - Q_{w_i} - Q_{δw_i}. The last
        // row imposes tr X = 0, excluding the trivial shrinking step.
        let r = join_tuple(&residual_blocks(&current, &w)).push(0.0);
        let mut jac = DMatrix::zeros(n * len + 1, 2 * n * n);
        for c in 0..n {
            for rr in 0..n {
                let mut x = DMatrix::zeros(n, n);
                x[(rr, c)] = 1.0;
                let col: Vec<SymMultiMap> = current.iter().map(|m| linear_action_on_q(m, &x)).collect();
                jac.view_mut((0, c * n + rr), (n * len, 1)).copy_from(&join_tuple(&col));
            }
        }
        for i in 0..n {
            for rr in 0..n {
                jac.view_mut((i * len, n * n + i * n + rr), (len, 1))
                    .copy_from(&(-qm.column(rr)));
            }
        }
        let weight = join_tuple(&current).norm();
        for d in 0..n {
            jac[(n * len, d * n + d)] = weight;
        }
        // Gauge directions (rotations of the chart) are exact null
        // directions only for noiseless data; cut them off explicitly.
        let delta = linalg::lstsq(&jac, &(-&r), GAUGE_CUTOFF)?;
        let x = DMatrix::from_column_slice(n, n, &delta.as_slice()[..n * n]);
        let dw = DMatrix::from_column_slice(n, n, &delta.as_slice()[n * n..]);
        steps += 1;
        let mut t = 1.0;
        while t > 1e-3 {
            let mut candidate = (DMatrix::identity(n, n) + &x * t) * &n_mat;
            let det = candidate.determinant();
            if det == 0.0 || !det.is_finite() {
                t *= 0.5;
                continue;
            }
            let g = det.abs().powf(1.0 / n as f64);
            candidate /= g;
            let Some(inv) = candidate.clone().try_inverse() else {
                t *= 0.5;
                continue;
            };
            let next: Vec<SymMultiMap> = thetas
                .iter()
                .map(|th| transform(th, &candidate, &inv))
                .collect::<Result<_>>()?;
            // Rescaling N by 1/g scales the tuple by g.
            let w_next = (&w + &dw * t) * g;
            let res_next = rel(&next, &w_next);
            if res_next < res {
                let stalled = res_next > 0.5 * res;
                n_mat = candidate;
                current = next;
                w = w_next;
                res = res_next;
                if stalled {
                    break 'newton;
                }
                continue 'newton;
            }
            t *= 0.5;
        }
        break;
    }
    if res > RECOVERY_TOL {
        return Err(Error::OutsideNeighborhood(format!(
            "quadratic parts are not conjugate to a Q-tuple: residual {res:.3e}"
        )));
    }
    let dev = (n_mat.transpose() * &n_mat - DMatrix::identity(n, n)).norm();
    let basis = BasisMatrix::new(w)?;
    Ok((
        basis,
        n_mat,
        RecoveryStats {
            initial_residual: initial,
            residual: res,
            newton_steps: steps,
            normalization_deviation: dev,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::defcomplex::theta_phi;
    use crate::fd::DEFAULT_STEP;
    use crate::mobius::{local_jet, ActionSpec, Generator, Letter, SpherePoint};
    use crate::pipeline::{classify_pair, find_fixed_point, jets_at_fixed_point, make_perturbation, FIXED_POINT_TOL};
    use crate::rng::trial_rng;
    use crate::symtensor::random_basis;

    #[test]
    fn exact_jets_return_the_basis() {
        let b = random_basis(3, 2.0, 1e3, &mut trial_rng(1, 0));
        let s = ActionSpec::new(2, b.clone()).unwrap();
        let jets = FixedPointJets {
            chart: crate::mobius::chart_at(&SpherePoint::infinity(3)).unwrap(),
            k: 2,
            a: local_jet(&s, Letter::new(Generator::A, 1)).unwrap(),
            b: (0..3).map(|i| local_jet(&s, Letter::new(Generator::B(i), 1)).unwrap()).collect(),
            max_linear_deviation: 0.0,
        };
        let rec = recover_basis(&jets).unwrap();
        assert!((rec.basis.matrix() - b.matrix()).amax() < 1e-13);
        assert_eq!(rec.stats.newton_steps, 0);
    }

    #[test]
    fn prescribed_q_parts_are_inverted() {
        let w = random_basis(2, 2.0, 1e3, &mut trial_rng(2, 0));
        let (b, _, _) = recover_from_thetas(&w.q_maps()).unwrap();
        assert!((b.matrix() - w.matrix()).amax() < 1e-13);
        for i in 0..2 {
            assert!((fit_q(&w.q_maps()[i]).unwrap() - w.vector(i)).amax() < 1e-13);
        }
    }

    #[test]
    fn linear_conjugation_is_undone_up_to_conformal_class() {
        let mut rng = trial_rng(3, 0);
        for n in 2..=4 {
            let b = random_basis(n, 2.0, 1e3, &mut rng);
            let a = DMatrix::identity(n, n) + DMatrix::from_fn(n, n, |_, _| rand::Rng::random_range(&mut rng, -0.1..0.1));
            let thetas = theta_phi(&a, &b).unwrap();
            let (rec, _, stats) = recover_from_thetas(&thetas).unwrap();
            assert!(stats.initial_residual > 1e-4);
            assert!(stats.residual < 1e-12);
            let v = classify_pair(&rec, &b, 1e-8).unwrap();
            assert!(v.conjugate, "n={n}: {v:?}");
        }
    }

    #[test]
    fn non_q_tuples_are_rejected() {
        let mut rng = trial_rng(4, 0);
        let n = 3;
        let thetas: Vec<SymMultiMap> = (0..n)
            .map(|_| {
                let v = DVector::from_fn(coordinate_len(2, n), |_, _| rand::Rng::random_range(&mut rng, -1.0..1.0));
                SymMultiMap::from_vector(2, n, &v).unwrap()
            })
            .collect();
        assert!(matches!(recover_from_thetas(&thetas), Err(Error::OutsideNeighborhood(_))));
    }

    #[test]
    fn closed_loop_recovers_the_class() {
        for fam in ["conformal", "bump", "mixed"] {
            let b = random_basis(2, 2.0, 1e3, &mut trial_rng(5, 0));
            let act = make_perturbation(ActionSpec::new(3, b.clone()).unwrap(), fam, 0.1, &mut trial_rng(5, 1)).unwrap();
            let fp = find_fixed_point(&act, FIXED_POINT_TOL).unwrap();
            let jets = jets_at_fixed_point(&act, 3, &fp.point, DEFAULT_STEP).unwrap();
            let rec = recover_basis(&jets).unwrap();
            let v = classify_pair(&rec.basis, &b, 1e-6).unwrap();
            assert!(v.conjugate && v.residual <= 1e-5, "{fam}: {v:?}");
        }
    }
}
