//! Finite-difference extraction of third-order jets at a point, used as an
//! independent oracle for the closed-form jets and as the numeric jet
//! extractor for perturbed actions.
//!
//! Directional derivatives of `g(s) = f(s u) - f(0)` use central stencils
//! with two Richardson steps (base step, half and quarter), cancelling
//! the `h^2` and `h^4` error terms; mixed derivatives come from
//! polarization.

use nalgebra::DVector;

use crate::jets::Jet3;
use crate::symtensor::SymMultiMap;

/// Default base step.
pub const DEFAULT_STEP: f64 = 1e-3;

struct Directional<'a, F: Fn(&DVector<f64>) -> DVector<f64>> {
    f: &'a F,
    f0: DVector<f64>,
}

impl<F: Fn(&DVector<f64>) -> DVector<f64>> Directional<'_, F> {
    fn g(&self, u: &DVector<f64>, s: f64) -> DVector<f64> {
        (self.f)(&(u * s)) - &self.f0
    }

    fn d1(&self, u: &DVector<f64>, h: f64) -> DVector<f64> {
        (self.g(u, h) - self.g(u, -h)) / (2.0 * h)
    }

    fn d2(&self, u: &DVector<f64>, h: f64) -> DVector<f64> {
        (self.g(u, h) + self.g(u, -h)) / (h * h)
    }

    fn d3(&self, u: &DVector<f64>, h: f64) -> DVector<f64> {
        (self.g(u, 2.0 * h) - self.g(u, h) * 2.0 + self.g(u, -h) * 2.0 - self.g(u, -2.0 * h)) / (2.0 * h * h * h)
    }

    fn richardson(&self, d: impl Fn(&Self, &DVector<f64>, f64) -> DVector<f64>, u: &DVector<f64>, h: f64) -> DVector<f64> {
        let r1 = |h: f64| (d(self, u, h / 2.0) * 4.0 - d(self, u, h)) / 3.0;
        (r1(h / 2.0) * 16.0 - r1(h)) / 15.0
    }
}

fn unit(n: usize, i: usize) -> DVector<f64> {
    DVector::from_fn(n, |j, _| if i == j { 1.0 } else { 0.0 })
}

/// Jet at the origin of `y -> f(y) - f(0)`.
pub fn fd_jet(f: impl Fn(&DVector<f64>) -> DVector<f64>, n: usize, step: f64) -> Jet3 {
    let dir = Directional {
        f0: f(&DVector::zeros(n)),
        f: &f,
    };
    let e: Vec<DVector<f64>> = (0..n).map(|i| unit(n, i)).collect();

    let linear = SymMultiMap::from_basis_fn(n, 1, |idx| dir.richardson(Directional::d1, &e[idx[0]], step));
    let quadratic = SymMultiMap::from_basis_fn(n, 2, |idx| {
        let (a, b) = (&e[idx[0]], &e[idx[1]]);
        let plus = dir.richardson(Directional::d2, &(a + b), step);
        let minus = dir.richardson(Directional::d2, &(a - b), step);
        (plus - minus) / 4.0
    });
    let cubic = SymMultiMap::from_basis_fn(n, 3, |idx| {
        let (x, y, z) = (&e[idx[0]], &e[idx[1]], &e[idx[2]]);
        let c = |u: DVector<f64>| dir.richardson(Directional::d3, &u, step);
        (c(x + y + z) - c(x + y - z) - c(x - y + z) + c(x - y - z)) / 24.0
    });
    Jet3::from_parts(linear, quadratic, cubic)
}
