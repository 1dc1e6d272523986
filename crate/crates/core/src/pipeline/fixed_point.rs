//! The global fixed point of a perturbed action and the jets of its
//! generators there.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fd::fd_jet;
use crate::jets::Jet3;
use crate::mobius::{chart_at, Generator, Letter, PointChart, SphereAction, SpherePoint, DEFAULT_SWITCH_RADIUS};

/// Default displacement tolerance for the fixed-point iteration.
pub const FIXED_POINT_TOL: f64 = 1e-12;

/// Iteration budget for the fixed-point search.
pub const MAX_ITERATIONS: usize = 1000;

/// Tolerance on the linear parts of the extracted jets.
pub const LINEAR_RIGIDITY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct FixedPoint {
    #[serde(skip)]
    pub point: SpherePoint,
    /// Inversion-chart coordinate of the point.
    pub chart: Vec<f64>,
    pub iterations: usize,
    /// Ratio of successive displacements once the iteration is in its
    /// linear regime.
    pub contraction_ratio: f64,
    /// Largest chart displacement of the point under each `b_i`.
    pub b_displacement: f64,
}

fn chart_of(p: &SpherePoint) -> Result<DVector<f64>> {
    p.chart()
        .ok_or_else(|| Error::OutsideNeighborhood("iteration reached the affine origin".into()))
}

/// Iterates `ρ^a` from `∞` until the chart displacement drops below `tol`
/// and then while it keeps shrinking; every `b_i` must fix the limit within
/// `10 tol`.
pub fn find_fixed_point(action: &dyn SphereAction, tol: f64) -> Result<FixedPoint> {
    let n = action.dim();
    let a = Letter::new(Generator::A, 1);
    let mut p = SpherePoint::infinity(n);
    let mut y = chart_of(&p)?;
    let mut prev_disp = f64::NAN;
    let mut ratio = f64::NAN;
    let mut iterations = 0;
    loop {
        if iterations >= MAX_ITERATIONS {
            return Err(Error::NoConvergence(format!(
                "fixed-point iteration did not settle in {MAX_ITERATIONS} steps"
            )));
        }
        let next = action.apply_letter(a, &p)?;
        let y_next = chart_of(&next)?;
        let disp = (&y_next - &y).norm();
        iterations += 1;
        // Ratios are only meaningful well above round-off.
        if prev_disp.is_finite() && prev_disp > 1e-9 && disp > 0.0 {
            ratio = disp / prev_disp;
        }
        p = next;
        y = y_next;
        if disp < tol {
            break;
        }
        prev_disp = disp;
    }
    // Downstream charts expand by powers of k, so settle at round-off.
    let mut last = f64::INFINITY;
    for _ in 0..100 {
        let next = action.apply_letter(a, &p)?;
        let y_next = chart_of(&next)?;
        let disp = (&y_next - &y).norm();
        if disp >= last {
            break;
        }
        iterations += 1;
        p = next;
        y = y_next;
        last = disp;
        if disp == 0.0 {
            break;
        }
    }
    let mut b_disp: f64 = 0.0;
    for i in 0..n {
        let q = action.apply_letter(Letter::new(Generator::B(i), 1), &p)?;
        b_disp = b_disp.max((chart_of(&q)? - &y).norm());
    }
    if b_disp > 10.0 * tol {
        return Err(Error::OutsideNeighborhood(format!(
            "the a-fixed point is moved by a b generator by {b_disp:.3e}"
        )));
    }
    Ok(FixedPoint {
        chart: y.as_slice().to_vec(),
        point: p,
        iterations,
        contraction_ratio: ratio,
        b_displacement: b_disp,
    })
}

/// Jets at a fixed point of the chart-conjugated generators.
#[derive(Debug, Clone)]
pub struct FixedPointJets {
    pub chart: PointChart,
    pub k: u32,
    pub a: Jet3,
    pub b: Vec<Jet3>,
    /// Largest distance of the measured linear parts from `k^-1 I` and `I`.
    pub max_linear_deviation: f64,
}

/// `z -> φ_p(ρ^γ(φ_p^-1(z)))`, with `NaN` where the action fails.
fn chart_conjugated<'a>(
    action: &'a dyn SphereAction,
    chart: &'a PointChart,
    letter: Letter,
) -> impl Fn(&DVector<f64>) -> DVector<f64> + 'a {
    move |z| {
        let q = chart.inverse(z, DEFAULT_SWITCH_RADIUS);
        action
            .apply_letter(letter, &q)
            .and_then(|r| chart.apply(&r))
            .unwrap_or_else(|_| DVector::from_element(z.len(), f64::NAN))
    }
}

fn jet_is_finite(j: &Jet3) -> bool {
    [j.linear(), j.quadratic(), j.cubic()]
        .iter()
        .all(|m| m.coeffs().iter().all(|c| c.is_finite()))
}

/// Order-3 jets of `a` and the `b_i` in the chart centred at `p̂`. Linear
/// parts must be `k^-1 I` and `I` within [`LINEAR_RIGIDITY_TOL`]; the
/// returned jets carry those exact linear parts.
pub fn jets_at_fixed_point(action: &dyn SphereAction, k: u32, fixed: &SpherePoint, step: f64) -> Result<FixedPointJets> {
    let n = action.dim();
    let chart = chart_at(fixed)?;
    let measure = |letter: Letter| -> Result<Jet3> {
        let j = fd_jet(chart_conjugated(action, &chart, letter), n, step);
        if !jet_is_finite(&j) {
            return Err(Error::OutsideNeighborhood(format!("jet of {letter} is not finite")));
        }
        Ok(j)
    };
    let id = DMatrix::<f64>::identity(n, n);
    let fbar = &id / k as f64;
    let a_raw = measure(Letter::new(Generator::A, 1))?;
    let mut worst = a_raw.linear_deviation(&fbar);
    let mut b = Vec::with_capacity(n);
    for i in 0..n {
        let j = measure(Letter::new(Generator::B(i), 1))?;
        worst = worst.max(j.linear_deviation(&id));
        b.push(j.with_linear(&id)?);
    }
    if worst > LINEAR_RIGIDITY_TOL {
        return Err(Error::OutsideNeighborhood(format!(
            "linear parts at the fixed point deviate from k^-1 I and I by {worst:.3e}"
        )));
    }
    Ok(FixedPointJets {
        chart,
        k,
        a: a_raw.with_linear(&fbar)?,
        b,
        max_linear_deviation: worst,
    })
}
