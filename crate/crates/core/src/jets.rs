//! Third-order jets at the origin of germs of local diffeomorphisms fixing 0.
//!
//! A jet stores `D1 = DF(0)`, `D2 = D^2F(0)` and `D3 = D^3F(0)` so that
//!
//! ```text
//! F(x) = D1 x + 1/2 D2(x, x) + 1/6 D3(x, x, x) + O(|x|^4).
//! ```

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::symtensor::{NormBound, NormMode, SymMultiMap};

/// Relative tolerance used to decide that a linear part is a given matrix.
pub const LINEAR_PART_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct Jet3 {
    linear: SymMultiMap,
    quadratic: SymMultiMap,
    cubic: SymMultiMap,
}

fn unit(n: usize, i: usize) -> DVector<f64> {
    DVector::from_fn(n, |j, _| if i == j { 1.0 } else { 0.0 })
}

impl Jet3 {
    /// Checked constructor: orders 1, 2, 3, equal dimensions, invertible
    /// linear part.
    pub fn new(linear: SymMultiMap, quadratic: SymMultiMap, cubic: SymMultiMap) -> Result<Self> {
        if linear.order() != 1 || quadratic.order() != 2 || cubic.order() != 3 {
            return Err(Error::Contract(format!(
                "jet parts must have orders 1, 2, 3; got {}, {}, {}",
                linear.order(),
                quadratic.order(),
                cubic.order()
            )));
        }
        check_dim(linear.dim(), quadratic.dim())?;
        check_dim(linear.dim(), cubic.dim())?;
        let jet = Self {
            linear,
            quadratic,
            cubic,
        };
        let m = jet.linear_matrix();
        let s = m.clone().singular_values();
        if !(s.min() > 1e-14 * s.max().max(1.0)) {
            return Err(Error::Singular("jet linear part is not invertible".into()));
        }
        Ok(jet)
    }

    pub(crate) fn from_parts(linear: SymMultiMap, quadratic: SymMultiMap, cubic: SymMultiMap) -> Self {
        Self {
            linear,
            quadratic,
            cubic,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_parts(SymMultiMap::identity(n), SymMultiMap::zeros(n, 2), SymMultiMap::zeros(n, 3))
    }

    /// Jet of `x -> alpha x`.
    pub fn scaling(n: usize, alpha: f64) -> Result<Self> {
        if alpha == 0.0 || !alpha.is_finite() {
            return Err(Error::Parameter(format!("scaling factor must be non-zero and finite, got {alpha}")));
        }
        Ok(Self::from_parts(
            SymMultiMap::identity(n).scaled(alpha),
            SymMultiMap::zeros(n, 2),
            SymMultiMap::zeros(n, 3),
        ))
    }

    /// Jet of the linear map `x -> A x`.
    pub fn linear_map(a: &DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        check_dim(n, a.ncols())?;
        Self::new(SymMultiMap::from_matrix(a), SymMultiMap::zeros(n, 2), SymMultiMap::zeros(n, 3))
    }

    pub fn dim(&self) -> usize {
        self.linear.dim()
    }

    pub fn linear(&self) -> &SymMultiMap {
        &self.linear
    }

    pub fn quadratic(&self) -> &SymMultiMap {
        &self.quadratic
    }

    pub fn cubic(&self) -> &SymMultiMap {
        &self.cubic
    }

    pub fn linear_matrix(&self) -> DMatrix<f64> {
        self.linear.to_matrix().expect("order 1")
    }

    /// Same jet with the linear part replaced.
    pub fn with_linear(&self, a: &DMatrix<f64>) -> Result<Self> {
        Self::new(SymMultiMap::from_matrix(a), self.quadratic.clone(), self.cubic.clone())
    }

    /// Truncated Taylor polynomial at `x`.
    pub fn eval(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim(), x.len())?;
        Ok(self.linear.eval_diag(x) + self.quadratic.eval_diag(x) * 0.5 + self.cubic.eval_diag(x) / 6.0)
    }

    /// Jet of `self ∘ g`.
    pub fn compose(&self, g: &Jet3) -> Result<Jet3> {
        check_dim(self.dim(), g.dim())?;
        let n = self.dim();
        let f1 = self.linear_matrix();
        let g1 = g.linear_matrix();
        let cols: Vec<DVector<f64>> = (0..n).map(|j| g1.column(j).into_owned()).collect();

        let linear = SymMultiMap::from_matrix(&(&f1 * &g1));
        let quadratic = SymMultiMap::from_basis_fn(n, 2, |idx| {
            let (a, b) = (idx[0], idx[1]);
            &f1 * g.quadratic.value_at(&[a, b]) + self.quadratic.eval(&[&cols[a], &cols[b]]).expect("dims checked")
        });
        let cubic = SymMultiMap::from_basis_fn(n, 3, |idx| {
            let (a, b, c) = (idx[0], idx[1], idx[2]);
            let mut out = &f1 * g.cubic.value_at(&[a, b, c]);
            for (x, y, z) in [(a, b, c), (b, a, c), (c, a, b)] {
                let inner = g.quadratic.value_at(&[y, z]);
                out += self.quadratic.eval(&[&cols[x], &inner]).expect("dims checked");
            }
            out + self.cubic.eval(&[&cols[a], &cols[b], &cols[c]]).expect("dims checked")
        });
        Ok(Jet3::from_parts(linear, quadratic, cubic))
    }

    /// Jet of the inverse germ.
    pub fn invert(&self) -> Result<Jet3> {
        let a_inv = self
            .linear_matrix()
            .try_inverse()
            .ok_or_else(|| Error::Singular("jet linear part is not invertible".into()))?;
        let n = self.dim();
        let q = self.quadratic.compose_inputs(&a_inv)?.compose_output(&(-&a_inv))?;
        let partial = Jet3::from_parts(SymMultiMap::from_matrix(&a_inv), q, SymMultiMap::zeros(n, 3));
        // With G = (A^-1, G2, 0), the cubic part of F∘G is A G3 + (rest); the
        // rest must vanish, so G3 = -A^-1 (rest).
        let rest = self.compose(&partial)?.cubic;
        let cubic = rest.compose_output(&(-&a_inv))?;
        Ok(Jet3::from_parts(partial.linear, partial.quadratic, cubic))
    }

    /// `h ∘ self ∘ h^-1`.
    pub fn conjugate(&self, h: &Jet3) -> Result<Jet3> {
        h.compose(&self.compose(&h.invert()?)?)
    }

    /// `self^m` for any integer `m`.
    pub fn power(&self, m: i64) -> Result<Jet3> {
        let base = if m < 0 { self.invert()? } else { self.clone() };
        let mut acc = Jet3::identity(self.dim());
        let mut sq = base;
        let mut e = m.unsigned_abs();
        while e > 0 {
            if e & 1 == 1 {
                acc = acc.compose(&sq)?;
            }
            e >>= 1;
            if e > 0 {
                sq = sq.compose(&sq)?;
            }
        }
        Ok(acc)
    }

    /// Largest entry of `D1 - A`, relative to `max(1, |A|_max)`.
    pub fn linear_deviation(&self, a: &DMatrix<f64>) -> f64 {
        let scale = a.amax().max(1.0);
        (self.linear_matrix() - a).amax() / scale
    }

    /// `1/2 D2` for a jet tangent to the identity.
    pub fn theta(&self) -> Result<SymMultiMap> {
        self.theta_with_tol(LINEAR_PART_TOL)
    }

    pub fn theta_with_tol(&self, tol: f64) -> Result<SymMultiMap> {
        let n = self.dim();
        let dev = self.linear_deviation(&DMatrix::identity(n, n));
        if dev > tol {
            return Err(Error::Contract(format!("theta needs linear part I, deviation {dev:.3e}")));
        }
        Ok(self.quadratic.scaled(0.5))
    }

    /// Formal linearizer of a contraction with scalar linear part `alpha I`,
    /// `0 < alpha < 1`: the jet `H` with `D1 H = I` and
    /// `H ∘ self ∘ H^-1 = alpha I` up to order 3.
    pub fn linearize(&self) -> Result<Jet3> {
        let n = self.dim();
        let m = self.linear_matrix();
        let alpha = m[(0, 0)];
        let dev = self.linear_deviation(&(DMatrix::identity(n, n) * alpha));
        if dev > LINEAR_PART_TOL {
            return Err(Error::Contract(format!("linear part is not scalar (deviation {dev:.3e})")));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Contract(format!("scalar linear part {alpha} outside (0, 1)")));
        }
        let h2 = self.quadratic.scaled(1.0 / (alpha - alpha * alpha));
        let partial = Jet3::from_parts(SymMultiMap::identity(n), h2, SymMultiMap::zeros(n, 3));
        let h3 = partial.compose(self)?.cubic.scaled(1.0 / (alpha - alpha.powi(3)));
        Ok(Jet3::from_parts(partial.linear, partial.quadratic, h3))
    }

    /// Order-`r` pseudo-distance `Σ_{i<=r} ||D^i F - D^i G||`, using the
    /// spectral norm for the linear part and Frobenius upper bounds above.
    pub fn distance(&self, other: &Jet3, r: usize) -> Result<f64> {
        Ok(self.distance_bounds(other, r, None)?.upper)
    }

    /// Enclosure of the pseudo-distance; the lower end uses sampled
    /// operator-norm estimates when `sampled` is given.
    pub fn distance_bounds(&self, other: &Jet3, r: usize, sampled: Option<NormMode>) -> Result<NormBound> {
        check_dim(self.dim(), other.dim())?;
        if !(1..=3).contains(&r) {
            return Err(Error::Parameter(format!("distance order must be 1, 2 or 3, got {r}")));
        }
        let mut total = (&self.linear - &other.linear).op_norm(NormMode::Exact)?;
        let parts = [(&self.quadratic, &other.quadratic), (&self.cubic, &other.cubic)];
        for (a, b) in parts.into_iter().take(r - 1) {
            let d = a - b;
            total = total
                + match sampled {
                    Some(mode) => d.op_norm(mode)?,
                    None => NormBound {
                        lower: 0.0,
                        upper: d.frobenius_norm(),
                    },
                };
        }
        Ok(total)
    }

    /// Maximum coefficient difference over all three parts.
    pub fn max_diff(&self, other: &Jet3) -> f64 {
        self.linear
            .max_diff(&other.linear)
            .max(self.quadratic.max_diff(&other.quadratic))
            .max(self.cubic.max_diff(&other.cubic))
    }
}

/// A polynomial in `t` with `SymMultiMap` coefficients.
#[derive(Debug, Clone)]
struct TimePoly {
    terms: Vec<SymMultiMap>,
}

impl TimePoly {
    fn zero(n: usize, order: usize) -> Self {
        Self {
            terms: vec![SymMultiMap::zeros(n, order)],
        }
    }

    fn at(&self, t: f64) -> SymMultiMap {
        let mut acc = self.terms.last().expect("non-empty").clone();
        for c in self.terms.iter().rev().skip(1) {
            acc = &acc * t + c.clone();
        }
        acc
    }

    /// `∫_0^t`.
    fn integrate(&self) -> Self {
        let first = SymMultiMap::zeros(self.terms[0].dim(), self.terms[0].order());
        let mut terms = vec![first];
        terms.extend(self.terms.iter().enumerate().map(|(p, c)| c.scaled(1.0 / (p as f64 + 1.0))));
        Self { terms }
    }

    fn map(&self, f: impl Fn(&SymMultiMap) -> SymMultiMap) -> Self {
        Self {
            terms: self.terms.iter().map(f).collect(),
        }
    }
}

/// Jet of the time-`t` map of the flow of `x' = Q(x, x)`.
///
/// Picard iteration `J <- id + ∫ X_Q ∘ J` on time-polynomial jet
/// coefficients; the linear part stays the identity, and three iterations
/// fix every coefficient through order 3.
pub fn quad_flow_jet(q: &SymMultiMap, t: f64) -> Result<Jet3> {
    if q.order() != 2 {
        return Err(Error::Contract(format!("quadratic flow needs an order-2 map, got order {}", q.order())));
    }
    let n = q.dim();
    let mut quad = TimePoly::zero(n, 2);
    let mut cubic = TimePoly::zero(n, 3);
    for _ in 0..3 {
        // Jet of x -> Q(J x, J x) with J = (I, M2, M3):
        // D2 = 2 Q, D3(a, b, c) = 2 Σ_cyc Q(e_a, M2(e_b, e_c)).
        let rhs2 = TimePoly {
            terms: vec![q.scaled(2.0)],
        };
        let rhs3 = quad.map(|m2| {
            SymMultiMap::from_basis_fn(n, 3, |idx| {
                let (a, b, c) = (idx[0], idx[1], idx[2]);
                let mut out = DVector::zeros(n);
                for (x, y, z) in [(a, b, c), (b, a, c), (c, a, b)] {
                    out += q.apply_first(x, &m2.value_at(&[y, z]));
                }
                out * 2.0
            })
        });
        quad = rhs2.integrate();
        cubic = rhs3.integrate();
    }
    Ok(Jet3::from_parts(SymMultiMap::identity(n), quad.at(t), cubic.at(t)))
}

/// Jet of `x -> Q(x, x)` as a vector field, exposed for tests of the flow.
pub fn quadratic_field(q: &SymMultiMap, x: &DVector<f64>) -> DVector<f64> {
    q.eval_diag(x)
}

/// Columns `e_0..e_{n-1}`.
pub fn standard_basis(n: usize) -> Vec<DVector<f64>> {
    (0..n).map(|i| unit(n, i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symtensor::{bracket, coordinate_len, make_q};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    fn random_sym(n: usize, r: usize, scale: f64, rng: &mut ChaCha8Rng) -> SymMultiMap {
        let v = DVector::from_fn(coordinate_len(r, n), |_, _| rng.random_range(-scale..scale));
        SymMultiMap::from_vector(r, n, &v).unwrap()
    }

    fn random_jet(n: usize, seed: u64, tangent_to_identity: bool) -> Jet3 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lin = if tangent_to_identity {
            DMatrix::identity(n, n)
        } else {
            DMatrix::identity(n, n) + DMatrix::from_fn(n, n, |_, _| rng.random_range(-0.4..0.4))
        };
        Jet3::new(
            SymMultiMap::from_matrix(&lin),
            random_sym(n, 2, 1.0, &mut rng),
            random_sym(n, 3, 1.0, &mut rng),
        )
        .unwrap()
    }

    /// Polynomial maps R^n -> R^n as monomial exponent -> coefficient vector,
    /// truncated above degree 3.
    type Poly = BTreeMap<Vec<u32>, DVector<f64>>;

    fn degree(e: &[u32]) -> u32 {
        e.iter().sum()
    }

    fn poly_from_jet(j: &Jet3) -> Vec<Poly> {
        // One scalar polynomial per output coordinate, stored with 1-vectors.
        let n = j.dim();
        let mut comps: Vec<Poly> = vec![Poly::new(); n];
        let parts: [(&SymMultiMap, f64); 3] = [(j.linear(), 1.0), (j.quadratic(), 0.5), (j.cubic(), 1.0 / 6.0)];
        for (map, factor) in parts {
            let space = map.space();
            for (p, idx) in space.indices().iter().enumerate() {
                let mut e = vec![0u32; n];
                for &i in idx {
                    e[i] += 1;
                }
                for (c, comp) in comps.iter_mut().enumerate() {
                    let v = map.coeff(c, idx) * factor * space.multiplicity(p);
                    *comp.entry(e.clone()).or_insert_with(|| DVector::zeros(1)) += DVector::from_element(1, v);
                }
            }
        }
        comps
    }

    fn mul(a: &Poly, b: &Poly) -> Poly {
        let mut out = Poly::new();
        for (ea, ca) in a {
            for (eb, cb) in b {
                let e: Vec<u32> = ea.iter().zip(eb).map(|(x, y)| x + y).collect();
                if degree(&e) <= 3 {
                    *out.entry(e).or_insert_with(|| DVector::zeros(1)) += DVector::from_element(1, ca[0] * cb[0]);
                }
            }
        }
        out
    }

    /// Substitute `inner` into `outer` and truncate at degree 3.
    fn substitute(outer: &[Poly], inner: &[Poly]) -> Vec<Poly> {
        outer
            .iter()
            .map(|comp| {
                let mut out = Poly::new();
                for (e, c) in comp {
                    let mut term: Poly = Poly::new();
                    term.insert(vec![0; inner.len()], DVector::from_element(1, c[0]));
                    for (var, &pow) in e.iter().enumerate() {
                        for _ in 0..pow {
                            term = mul(&term, &inner[var]);
                        }
                    }
                    for (te, tc) in term {
                        *out.entry(te).or_insert_with(|| DVector::zeros(1)) += tc;
                    }
                }
                out
            })
            .collect()
    }

    fn jet_from_poly(p: &[Poly]) -> Jet3 {
        let n = p.len();
        let build = |r: usize| {
            let space = crate::symtensor::MultiIndexSpace::get(n, r);
            let fact = (1..=r).product::<usize>() as f64;
            SymMultiMap::from_basis_fn(n, r, |idx| {
                let mut e = vec![0u32; n];
                for &i in idx {
                    e[i] += 1;
                }
                let mult = space.multiplicity(space.position(idx));
                DVector::from_fn(n, |c, _| p[c].get(&e).map_or(0.0, |v| v[0]) * fact / mult)
            })
        };
        Jet3::from_parts(build(1), build(2), build(3))
    }

    #[test]
    fn compose_with_identity() {
        let f = random_jet(3, 1, false);
        assert!(f.compose(&Jet3::identity(3)).unwrap().max_diff(&f) < 1e-15);
        assert!(Jet3::identity(3).compose(&f).unwrap().max_diff(&f) < 1e-15);
    }

    #[test]
    fn compose_matches_polynomial_oracle() {
        for seed in 0..10 {
            let f = random_jet(3, seed, false);
            let g = random_jet(3, seed + 100, false);
            let expected = jet_from_poly(&substitute(&poly_from_jet(&f), &poly_from_jet(&g)));
            let got = f.compose(&g).unwrap();
            assert!(got.max_diff(&expected) < 1e-11, "seed {seed}: {}", got.max_diff(&expected));
        }
    }

    #[test]
    fn compose_quadratic_with_tangent_identity() {
        let f = random_jet(3, 5, false);
        let g = random_jet(3, 6, true);
        let h = f.compose(&g).unwrap();
        let f1 = f.linear_matrix();
        let expected = f.quadratic() + &g.quadratic().compose_output(&f1).unwrap();
        assert!(h.quadratic().approx_eq(&expected, 1e-12));
    }

    #[test]
    fn compose_dimension_mismatch() {
        assert!(matches!(
            Jet3::identity(2).compose(&Jet3::identity(3)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn scaling_jets() {
        assert_eq!(Jet3::scaling(3, 1.0).unwrap(), Jet3::identity(3));
        let ab = Jet3::scaling(3, 2.0).unwrap().compose(&Jet3::scaling(3, -0.25).unwrap()).unwrap();
        assert!(ab.max_diff(&Jet3::scaling(3, -0.5).unwrap()) < 1e-15);
        assert!(matches!(Jet3::scaling(3, 0.0), Err(Error::Parameter(_))));
        assert!(Jet3::scaling(2, 0.3).unwrap().invert().unwrap().max_diff(&Jet3::scaling(2, 1.0 / 0.3).unwrap()) < 1e-14);
    }

    #[test]
    fn invert_round_trip() {
        assert_eq!(Jet3::identity(4).invert().unwrap(), Jet3::identity(4));
        for seed in 0..5 {
            let f = random_jet(4, seed, false);
            let inv = f.invert().unwrap();
            assert!(inv.compose(&f).unwrap().max_diff(&Jet3::identity(4)) < 1e-12);
            assert!(f.compose(&inv).unwrap().max_diff(&Jet3::identity(4)) < 1e-12);
        }
    }

    #[test]
    fn singular_linear_part_rejected() {
        let z = DMatrix::zeros(2, 2);
        assert!(matches!(Jet3::linear_map(&z), Err(Error::Singular(_))));
    }

    #[test]
    fn conjugation_cases() {
        let f = random_jet(3, 8, false);
        assert!(f.conjugate(&Jet3::identity(3)).unwrap().max_diff(&f) < 1e-13);
        let s = Jet3::scaling(3, 0.4).unwrap();
        assert!(s.conjugate(&Jet3::scaling(3, 3.0).unwrap()).unwrap().max_diff(&s) < 1e-15);

        let v = DVector::from_vec(vec![0.5, -1.0, 2.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = Jet3::new(SymMultiMap::identity(3), make_q(&v).scaled(2.0), random_sym(3, 3, 1.0, &mut rng)).unwrap();
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 0.1, 0.0, -0.3, 1.0, 0.5, 0.0, 0.2, 1.5]);
        let c = p.conjugate(&Jet3::linear_map(&a).unwrap()).unwrap();
        let a_inv = a.clone().try_inverse().unwrap();
        let expected = make_q(&v).scaled(2.0).compose_inputs(&a_inv).unwrap().compose_output(&a).unwrap();
        assert!(c.quadratic().approx_eq(&expected, 1e-12));
    }

    #[test]
    fn theta_cases() {
        assert_eq!(Jet3::identity(3).theta().unwrap(), SymMultiMap::zeros(3, 2));
        let v = DVector::from_vec(vec![1.0, 2.0]);
        let g = Jet3::new(SymMultiMap::identity(2), make_q(&v).scaled(2.0), SymMultiMap::zeros(2, 3)).unwrap();
        assert!(g.theta().unwrap().approx_eq(&make_q(&v), 1e-15));
        assert!(matches!(Jet3::scaling(2, 0.5).unwrap().theta(), Err(Error::Contract(_))));
    }

    #[test]
    fn quad_flow_closed_form() {
        // Cubic coefficient of the flow: 2 t^2 Σ_cyc Q(x, Q(y, z)).
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let q = random_sym(3, 2, 1.0, &mut rng);
        let t = 0.7;
        let g = quad_flow_jet(&q, t).unwrap();
        assert!(g.quadratic().approx_eq(&q.scaled(2.0 * t), 1e-14));
        let expected = SymMultiMap::from_basis_fn(3, 3, |idx| {
            let (a, b, c) = (idx[0], idx[1], idx[2]);
            let mut out = DVector::zeros(3);
            for (x, y, z) in [(a, b, c), (b, a, c), (c, a, b)] {
                out += q.apply_first(x, &q.value_at(&[y, z]));
            }
            out * (2.0 * t * t)
        });
        assert!(g.cubic().approx_eq(&expected, 1e-13));
        assert_eq!(quad_flow_jet(&q, 0.0).unwrap().max_diff(&Jet3::identity(3)), 0.0);
        assert!(quad_flow_jet(&random_sym(3, 3, 1.0, &mut rng), 1.0).is_err());
    }

    #[test]
    fn quad_flow_theta_is_q() {
        let q = make_q(&DVector::from_vec(vec![0.3, -0.7, 1.1]));
        assert!(quad_flow_jet(&q, 1.0).unwrap().theta().unwrap().approx_eq(&q, 1e-15));
        assert!(quad_flow_jet(&q, -2.5).unwrap().theta().unwrap().approx_eq(&q.scaled(-2.5), 1e-15));
    }

    #[test]
    fn quad_flow_matches_rk4() {
        // Integrate x' = Q(x, x) numerically and compare the jet's Taylor
        // polynomial on a small ball.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let q = random_sym(2, 2, 1.0, &mut rng);
        let t = 0.8;
        let g = quad_flow_jet(&q, t).unwrap();
        let rk4 = |x0: &DVector<f64>| {
            let steps = 400;
            let h = t / steps as f64;
            let mut x = x0.clone();
            for _ in 0..steps {
                let k1 = quadratic_field(&q, &x);
                let k2 = quadratic_field(&q, &(&x + &k1 * (h / 2.0)));
                let k3 = quadratic_field(&q, &(&x + &k2 * (h / 2.0)));
                let k4 = quadratic_field(&q, &(&x + &k3 * h));
                x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            }
            x
        };
        for s in [1e-2, 5e-3] {
            let x = DVector::from_vec(vec![0.6, -0.8]) * s;
            let err = (rk4(&x) - g.eval(&x).unwrap()).norm();
            // Remainder is O(|x|^4).
            assert!(err < 50.0 * s.powi(4), "s = {s}: {err}");
        }
    }

    #[test]
    fn linearize_cases() {
        let k = 3.0;
        let s = Jet3::scaling(3, 1.0 / k).unwrap();
        assert!(s.linearize().unwrap().max_diff(&Jet3::identity(3)) < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let f = Jet3::new(
            SymMultiMap::identity(3).scaled(1.0 / k),
            random_sym(3, 2, 1.0, &mut rng),
            random_sym(3, 3, 1.0, &mut rng),
        )
        .unwrap();
        let h = f.linearize().unwrap();
        assert!(h.quadratic().approx_eq(&f.quadratic().scaled(k * k / (k - 1.0)), 1e-13));
        let lin = f.conjugate(&h).unwrap();
        assert!(lin.max_diff(&s) < 1e-10);

        assert!(matches!(Jet3::scaling(3, 1.5).unwrap().linearize(), Err(Error::Contract(_))));
        let nonscalar = Jet3::linear_map(&DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 0.3]))).unwrap();
        assert!(matches!(nonscalar.linearize(), Err(Error::Contract(_))));
    }

    #[test]
    fn distance_cases() {
        let f = random_jet(3, 2, false);
        assert_eq!(f.distance(&f, 3).unwrap(), 0.0);
        let d = Jet3::scaling(3, 0.3).unwrap().distance(&Jet3::scaling(3, 0.8).unwrap(), 3).unwrap();
        assert!((d - 0.5).abs() < 1e-14);

        let v = DVector::from_vec(vec![1.0, 2.0, -2.0]);
        let p = Jet3::new(SymMultiMap::identity(3), make_q(&v).scaled(2.0), SymMultiMap::zeros(3, 3)).unwrap();
        let b = p.distance_bounds(&Jet3::identity(3), 2, Some(NormMode::sampled())).unwrap();
        // ||2 Q_v|| >= |2 Q_v(u, u)| = 2 |v| for u = v / |v|.
        assert!(b.upper >= 2.0 * v.norm() - 1e-12);
        assert!(b.lower <= b.upper);
        assert!(b.lower >= 2.0 * v.norm() * 0.9);
    }

    #[test]
    fn power_matches_repeated_compose() {
        let f = random_jet(2, 30, false);
        let mut acc = Jet3::identity(2);
        for _ in 0..5 {
            acc = acc.compose(&f).unwrap();
        }
        assert!(f.power(5).unwrap().max_diff(&acc) < 1e-10);
        assert!(f.power(-2).unwrap().compose(&f.power(2).unwrap()).unwrap().max_diff(&Jet3::identity(2)) < 1e-11);
    }

    #[test]
    fn bracket_identity_commutator_of_cubic_parts() {
        for seed in 0..20 {
            let g1 = random_jet(3, seed, true);
            let g2 = random_jet(3, seed + 500, true);
            let lhs = bracket(g1.quadratic(), g2.quadratic()).unwrap();
            let rhs = g1.compose(&g2).unwrap().cubic() - g2.compose(&g1).unwrap().cubic();
            assert!(lhs.approx_eq(&rhs, 1e-10));
        }
    }

    #[test]
    fn psi_normalization_quarter_factor() {
        // Ψ(G) = 1/4 (D3(G_i G_j) - D3(G_j G_i)) and Θ = 1/2 D2, so on the
        // flows G^1_{Q_i} the composite is [Q_i, Q_j].
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let qi = random_sym(3, 2, 1.0, &mut rng);
        let qj = random_sym(3, 2, 1.0, &mut rng);
        let gi = quad_flow_jet(&qi, 1.0).unwrap();
        let gj = quad_flow_jet(&qj, 1.0).unwrap();
        let psi = (gi.compose(&gj).unwrap().cubic() - gj.compose(&gi).unwrap().cubic()).scaled(0.25);
        let b = bracket(&qi, &qj).unwrap();
        assert!(b.max_abs() > 0.1);
        assert!(psi.approx_eq(&b, 1e-12));
        assert!(!psi.approx_eq(&b.scaled(4.0), 1e-3));
    }

    #[test]
    fn q_maps_commute_under_bracket() {
        let qi = make_q(&DVector::from_vec(vec![1.0, 0.5, -0.2]));
        let qj = make_q(&DVector::from_vec(vec![-0.4, 2.0, 0.3]));
        assert!(bracket(&qi, &qj).unwrap().max_abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn compose_is_associative(seed in 0u64..200) {
            let f = random_jet(3, seed, false);
            let g = random_jet(3, seed + 1000, false);
            let h = random_jet(3, seed + 2000, false);
            let l = f.compose(&g).unwrap().compose(&h).unwrap();
            let r = f.compose(&g.compose(&h).unwrap()).unwrap();
            prop_assert!(l.max_diff(&r) < 1e-12 * l.cubic().max_abs().max(1.0));
        }

        #[test]
        fn flow_law(seed in 0u64..200, s in -1.0f64..1.0, t in -1.0f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q = random_sym(3, 2, 1.0, &mut rng);
            let lhs = quad_flow_jet(&q, s).unwrap().compose(&quad_flow_jet(&q, t).unwrap()).unwrap();
            let rhs = quad_flow_jet(&q, s + t).unwrap();
            prop_assert!(lhs.max_diff(&rhs) < 1e-10);
        }

        #[test]
        fn flow_equivariance(seed in 0u64..200, t in -1.0f64..1.0, k in 2u32..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q = random_sym(3, 2, 1.0, &mut rng);
            let k = k as f64;
            let fbar = Jet3::scaling(3, 1.0 / k).unwrap();
            let lhs = fbar.compose(&quad_flow_jet(&q, t).unwrap()).unwrap();
            let rhs = quad_flow_jet(&q, k * t).unwrap().compose(&fbar).unwrap();
            prop_assert!(lhs.max_diff(&rhs) < 1e-10);
        }

        #[test]
        fn linearize_annihilates(seed in 0u64..200, alpha in 0.05f64..0.95) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = Jet3::new(
                SymMultiMap::identity(3).scaled(alpha),
                random_sym(3, 2, 1.0, &mut rng),
                random_sym(3, 3, 1.0, &mut rng),
            ).unwrap();
            let h = f.linearize().unwrap();
            let lin = f.conjugate(&h).unwrap();
            let scale = h.cubic().max_abs().max(1.0);
            prop_assert!(lin.max_diff(&Jet3::scaling(3, alpha).unwrap()) < 1e-10 * scale);
        }

        #[test]
        fn distance_is_symmetric_and_triangular(seed in 0u64..200) {
            let f = random_jet(2, seed, false);
            let g = random_jet(2, seed + 7, false);
            let h = random_jet(2, seed + 13, false);
            let fg = f.distance(&g, 3).unwrap();
            prop_assert!((fg - g.distance(&f, 3).unwrap()).abs() < 1e-12);
            prop_assert!(fg <= f.distance(&h, 3).unwrap() + h.distance(&g, 3).unwrap() + 1e-12);
        }
    }
}
