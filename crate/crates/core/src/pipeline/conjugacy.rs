//! The global conjugacy `h` from `ρ_{B''}` to a perturbed action `ρ`:
//!
//! `h(x) = ρ(b_1^-m) ∘ φ^-1 ∘ φ̄ ∘ ρ_{B''}(b_1^m)(x)`
//!
//! with `m` minimal such that `ρ_{B''}(b_1^m)(x)` leaves `[-R, R]^n`. The
//! local chart `φ = N ∘ ψ ∘ φ_p̂` linearizes `ρ^a` exactly: `ψ` is the
//! Koenigs limit `ψ(z) = k^m H(f^m(z))` of the order-3 linearizer `H`
//! of `f = φ_p̂ ρ^a φ_p̂^-1`, and `N` is the normalization from recovery.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::jets::Jet3;
use crate::mobius::{ActionSpec, Generator, Letter, PointChart, SphereAction, SpherePoint};

use super::recover::Recovery;

/// Chart radius below which the order-3 inverse linearizer is trusted.
pub const KOENIGS_RADIUS: f64 = 1e-4;

/// Escape radius as a multiple of `max |v_i|`.
pub const ESCAPE_FACTOR: f64 = 4.0;

/// Budget for `m_x`.
pub const MAX_ESCAPE_STEPS: i64 = 1_000_000;

/// Grid of `points^n` points with coordinates evenly spaced in
/// `[-half_width, half_width]`; written `points:half_width`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridSpec {
    pub points: usize,
    pub half_width: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            points: 21,
            half_width: 3.0,
        }
    }
}

impl GridSpec {
    pub fn new(points: usize, half_width: f64) -> Result<Self> {
        if points < 2 || !(half_width > 0.0 && half_width.is_finite()) {
            return Err(Error::Parameter(format!(
                "grid needs at least 2 points and a positive half width, got {points}:{half_width}"
            )));
        }
        Ok(Self { points, half_width })
    }

    pub fn len(&self, n: usize) -> usize {
        self.points.pow(n as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn nodes(&self, n: usize) -> Vec<DVector<f64>> {
        let step = 2.0 * self.half_width / (self.points - 1) as f64;
        let coord = |i: usize| -self.half_width + step * i as f64;
        (0..self.len(n))
            .map(|mut flat| {
                DVector::from_fn(n, |_, _| {
                    let c = coord(flat % self.points);
                    flat /= self.points;
                    c
                })
            })
            .collect()
    }
}

impl FromStr for GridSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (p, w) = s
            .split_once(':')
            .ok_or_else(|| Error::Parameter(format!("grid must look like POINTS:HALF_WIDTH, got '{s}'")))?;
        let points = p
            .trim()
            .parse()
            .map_err(|_| Error::Parameter(format!("bad grid point count '{p}'")))?;
        let half_width = w
            .trim()
            .parse()
            .map_err(|_| Error::Parameter(format!("bad grid half width '{w}'")))?;
        Self::new(points, half_width)
    }
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.points, self.half_width)
    }
}

#[derive(Debug, Clone)]
pub struct GlobalConjugacy {
    standard: ActionSpec,
    chart: PointChart,
    lin_inv: Jet3,
    normalization_inv: DMatrix<f64>,
    escape_radius: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConjugacyReport {
    pub grid: GridSpec,
    pub grid_points: usize,
    /// Largest `dist(ρ^γ h(x), h(ρ_{B''}^γ x))` over the grid and the
    /// generators and their inverses.
    pub max_residual: f64,
    pub per_generator: Vec<(String, f64)>,
    /// Largest `|h_m(x) - h_{m+1}(x)|`.
    pub max_shift_deviation: f64,
    pub max_escape_steps: i64,
    /// Largest `dist(h(x), x)`.
    pub max_displacement: f64,
}

/// Builds `h` from the recovered data at the fixed point.
pub fn build_conjugacy(k: u32, recovery: &Recovery, chart: &PointChart) -> Result<GlobalConjugacy> {
    GlobalConjugacy::new(
        ActionSpec::new(k, recovery.basis.clone())?,
        chart.clone(),
        &recovery.linearizer,
        &recovery.normalization,
    )
}

impl GlobalConjugacy {
    pub fn new(standard: ActionSpec, chart: PointChart, linearizer: &Jet3, normalization: &DMatrix<f64>) -> Result<Self> {
        let normalization_inv = normalization
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Singular("chart normalization is singular".into()))?;
        let escape_radius = ESCAPE_FACTOR * standard.basis().max_vector_norm();
        Ok(Self {
            lin_inv: linearizer.invert()?,
            standard,
            chart,
            normalization_inv,
            escape_radius,
        })
    }

    pub fn escape_radius(&self) -> f64 {
        self.escape_radius
    }

    pub fn standard(&self) -> &ActionSpec {
        &self.standard
    }

    /// `φ^-1(z)` on the perturbed side.
    pub fn chart_inverse(&self, action: &dyn SphereAction, z: &DVector<f64>) -> Result<SpherePoint> {
        let k = self.standard.k() as f64;
        let mut m = 0i64;
        let mut u = &self.normalization_inv * z;
        while u.norm() > KOENIGS_RADIUS {
            u /= k;
            m += 1;
            if m > 200 {
                return Err(Error::OutsideNeighborhood("chart point too far from the fixed point".into()));
            }
        }
        let q = self.chart.inverse(&self.lin_inv.eval(&u)?, self.standard.switch_radius());
        if m == 0 {
            Ok(q)
        } else {
            action.apply_letter(Letter::new(Generator::A, -m), &q)
        }
    }

    fn escaped(&self, p: &SpherePoint) -> bool {
        match p {
            SpherePoint::Finite(x) => x.amax() > self.escape_radius,
            SpherePoint::Chart(_) => true,
        }
    }

    /// Minimal `m >= 0` with `ρ_{B''}(b_1^m)(x)` outside `[-R, R]^n`.
    pub fn escape_steps(&self, x: &SpherePoint) -> Result<i64> {
        if self.escaped(x) {
            return Ok(0);
        }
        let SpherePoint::Finite(x) = x else { unreachable!() };
        let v = self.standard.basis().vector(0);
        let mut y = x.clone();
        for m in 1..=MAX_ESCAPE_STEPS {
            y += &v;
            if y.amax() > self.escape_radius {
                return Ok(m);
            }
        }
        Err(Error::NoConvergence(format!("escape needs more than {MAX_ESCAPE_STEPS} steps")))
    }

    /// `h(x)` with `extra` steps beyond the minimal `m_x`.
    pub fn eval_with_shift(&self, action: &dyn SphereAction, x: &SpherePoint, extra: i64) -> Result<SpherePoint> {
        let m = self.escape_steps(x)? + extra;
        let b1 = |e: i64| Letter::new(Generator::B(0), e);
        let far = if m == 0 { x.clone() } else { self.standard.apply_letter(b1(m), x)? };
        let z = far
            .chart()
            .ok_or_else(|| Error::Contract("escaped point has no chart coordinate".into()))?;
        let q = self.chart_inverse(action, &z)?;
        if m == 0 {
            Ok(q)
        } else {
            action.apply_letter(b1(-m), &q)
        }
    }

    pub fn eval(&self, action: &dyn SphereAction, x: &SpherePoint) -> Result<SpherePoint> {
        self.eval_with_shift(action, x, 0)
    }

    /// Equivariance residuals and `m_x`-independence on a grid.
    pub fn residual_report(&self, action: &dyn SphereAction, grid: &GridSpec) -> Result<ConjugacyReport> {
        let n = self.standard.n();
        let letters = self.standard.symmetric_generators();
        let mut per = vec![0.0f64; letters.len()];
        let mut shift_dev = 0.0f64;
        let mut max_m = 0;
        let mut max_disp = 0.0f64;
        for node in grid.nodes(n) {
            let x = SpherePoint::Finite(node);
            max_m = max_m.max(self.escape_steps(&x)?);
            let hx = self.eval(action, &x)?;
            max_disp = max_disp.max(hx.distance(&x));
            shift_dev = shift_dev.max(self.eval_with_shift(action, &x, 1)?.distance(&hx));
            for (slot, &l) in per.iter_mut().zip(&letters) {
                let lhs = action.apply_letter(l, &hx)?;
                let rhs = self.eval(action, &self.standard.apply_letter(l, &x)?)?;
                *slot = slot.max(lhs.distance(&rhs));
            }
        }
        Ok(ConjugacyReport {
            grid: *grid,
            grid_points: grid.len(n),
            max_residual: per.iter().copied().fold(0.0, f64::max),
            per_generator: letters.iter().map(|l| l.to_string()).zip(per).collect(),
            max_shift_deviation: shift_dev,
            max_escape_steps: max_m,
            max_displacement: max_disp,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mobius::chart_at;
    use crate::rng::trial_rng;
    use crate::symtensor::random_basis;

    #[test]
    fn grid_parsing_and_nodes() {
        let g: GridSpec = "21:3".parse().unwrap();
        assert_eq!(g, GridSpec::default());
        assert_eq!(g.to_string(), "21:3");
        let nodes = GridSpec::new(3, 1.0).unwrap().nodes(2);
        assert_eq!(nodes.len(), 9);
        assert_eq!(nodes[0].as_slice(), &[-1.0, -1.0]);
        assert_eq!(nodes[1].as_slice(), &[0.0, -1.0]);
        assert_eq!(nodes[8].as_slice(), &[1.0, 1.0]);
        for bad in ["21", "1:3", "21:-1", "x:3", "21:y"] {
            assert!(matches!(bad.parse::<GridSpec>(), Err(Error::Parameter(_))), "{bad}");
        }
    }

    #[test]
    fn unperturbed_conjugacy_is_the_identity() {
        for (n, k) in [(2, 2), (3, 3)] {
            let s = ActionSpec::new(k, random_basis(n, 2.0, 1e3, &mut trial_rng(1, n as u64))).unwrap();
            let h = GlobalConjugacy::new(
                s.clone(),
                chart_at(&SpherePoint::infinity(n)).unwrap(),
                &Jet3::identity(n),
                &DMatrix::identity(n, n),
            )
            .unwrap();
            let grid = GridSpec::new(7, 3.0).unwrap();
            let rep = h.residual_report(&s, &grid).unwrap();
            assert!(rep.max_displacement <= 1e-10, "{rep:?}");
            assert!(rep.max_residual <= 1e-10, "{rep:?}");
            assert!(rep.max_shift_deviation <= 1e-10, "{rep:?}");
        }
    }
}
