//! Synthetic perturbed actions `ρ = h ∘ ρ_{B'} ∘ h^-1` for diffeomorphisms
//! `h` of the sphere close to the identity, with known ground truth.
//!
//! Every family acts in the inversion chart `y = x / |x|^2` (so `∞` is
//! `y = 0`) and fixes the affine origin. Families are registered by name
//! and built from a size parameter `eps <= 0.1` and a random stream.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::error::{check_dim, Error, Result};
use crate::mobius::{ActionSpec, Letter, SphereAction, SpherePoint};
use crate::symtensor::random_unit;

/// Largest admissible perturbation size.
pub const MAX_EPS: f64 = 0.1;

/// A diffeomorphism of `S^n` with an inverse.
pub trait SphereMap: Send + Sync + fmt::Debug {
    fn forward(&self, p: &SpherePoint) -> SpherePoint;
    fn inverse(&self, p: &SpherePoint) -> SpherePoint;
    fn describe(&self) -> Value;
}

#[derive(Debug, Clone)]
pub struct IdentityMap;

impl SphereMap for IdentityMap {
    fn forward(&self, p: &SpherePoint) -> SpherePoint {
        p.clone()
    }

    fn inverse(&self, p: &SpherePoint) -> SpherePoint {
        p.clone()
    }

    fn describe(&self) -> Value {
        json!({ "kind": "identity" })
    }
}

/// Applies `f` to the chart coordinate of `p`, leaving the affine origin in
/// place.
fn in_chart(p: &SpherePoint, f: impl Fn(&DVector<f64>) -> Option<DVector<f64>>) -> SpherePoint {
    match p.chart() {
        None => p.clone(),
        Some(y) => match f(&y) {
            Some(z) => SpherePoint::Chart(z),
            None => p.clone(),
        },
    }
}

/// Similarity `y -> shift + scale R y` of the chart: a Möbius map of the
/// sphere fixing the affine origin.
#[derive(Debug, Clone)]
pub struct ChartSimilarity {
    pub scale: f64,
    pub rotation: DMatrix<f64>,
    pub shift: DVector<f64>,
}

impl SphereMap for ChartSimilarity {
    fn forward(&self, p: &SpherePoint) -> SpherePoint {
        in_chart(p, |y| Some(&self.shift + (&self.rotation * y) * self.scale))
    }

    fn inverse(&self, p: &SpherePoint) -> SpherePoint {
        in_chart(p, |y| Some(self.rotation.transpose() * (y - &self.shift) / self.scale))
    }

    fn describe(&self) -> Value {
        json!({
            "kind": "chart_similarity",
            "scale": self.scale,
            "rotation": self.rotation.row_iter().map(|r| r.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>(),
            "shift": self.shift.as_slice(),
        })
    }
}

/// `s -> exp(1 - 1/(1 - s))` on `[0, 1)`, zero beyond; equal to 1 at 0.
fn bump_profile(s: f64) -> (f64, f64) {
    if s >= 1.0 {
        return (0.0, 0.0);
    }
    let t = 1.0 - s;
    let v = (1.0 - 1.0 / t).exp();
    (v, -v / (t * t))
}

/// Chart displacement `y -> y + β(|y - c|^2 / r^2) w` with compact support in
/// the ball of radius `r` about `c`.
#[derive(Debug, Clone)]
pub struct ChartBump {
    pub center: DVector<f64>,
    pub radius: f64,
    pub displacement: DVector<f64>,
}

impl ChartBump {
    fn apply(&self, y: &DVector<f64>) -> Option<DVector<f64>> {
        let d = y - &self.center;
        let s = d.norm_squared() / (self.radius * self.radius);
        if s >= 1.0 {
            return None;
        }
        Some(y + &self.displacement * bump_profile(s).0)
    }

    fn solve(&self, z: &DVector<f64>) -> Option<DVector<f64>> {
        // Points outside the support of the displaced ball are fixed.
        let reach = self.radius + self.displacement.norm();
        if (z - &self.center).norm() >= reach {
            return None;
        }
        let r2 = self.radius * self.radius;
        let mut y = z.clone();
        for _ in 0..100 {
            let d = &y - &self.center;
            let s = d.norm_squared() / r2;
            let (b, db) = bump_profile(s);
            let f = &y + &self.displacement * b - z;
            if f.norm() <= 1e-17 * (1.0 + z.norm()) {
                break;
            }
            // Jacobian I + w g^T with g = β'(s) 2 d / r^2 (Sherman-Morrison).
            let g = d * (2.0 * db / r2);
            let gw = g.dot(&self.displacement);
            let step = &f - &self.displacement * (g.dot(&f) / (1.0 + gw));
            y -= step;
        }
        if (&y - &self.center).norm() >= self.radius {
            return None;
        }
        Some(y)
    }
}

impl SphereMap for ChartBump {
    fn forward(&self, p: &SpherePoint) -> SpherePoint {
        in_chart(p, |y| self.apply(y))
    }

    fn inverse(&self, p: &SpherePoint) -> SpherePoint {
        in_chart(p, |z| self.solve(z))
    }

    fn describe(&self) -> Value {
        json!({
            "kind": "chart_bump",
            "center": self.center.as_slice(),
            "radius": self.radius,
            "displacement": self.displacement.as_slice(),
        })
    }
}

/// `maps[last] ∘ ... ∘ maps[0]`.
#[derive(Debug)]
pub struct Composite {
    pub maps: Vec<Box<dyn SphereMap>>,
}

impl SphereMap for Composite {
    fn forward(&self, p: &SpherePoint) -> SpherePoint {
        self.maps.iter().fold(p.clone(), |q, m| m.forward(&q))
    }

    fn inverse(&self, p: &SpherePoint) -> SpherePoint {
        self.maps.iter().rev().fold(p.clone(), |q, m| m.inverse(&q))
    }

    fn describe(&self) -> Value {
        json!({ "kind": "composite", "maps": self.maps.iter().map(|m| m.describe()).collect::<Vec<_>>() })
    }
}

/// A named family of perturbations.
pub trait PerturbationFamily: Send + Sync {
    fn name(&self) -> &'static str;

    /// A map of size `eps`; `eps = 0` must give the identity.
    fn build(&self, n: usize, eps: f64, rng: &mut ChaCha8Rng) -> Box<dyn SphereMap>;
}

fn cayley_rotation(n: usize, eps: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let raw = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let skew = (&raw - raw.transpose()) * 0.5;
    let norm = skew.norm();
    let s = if norm > 0.0 { skew * (eps / norm) } else { skew };
    let id = DMatrix::identity(n, n);
    (&id - &s * 0.5).try_inverse().expect("I - S/2 is invertible for skew S") * (&id + &s * 0.5)
}

fn similarity(n: usize, eps: f64, rng: &mut ChaCha8Rng) -> ChartSimilarity {
    ChartSimilarity {
        scale: 1.0 / (1.0 + eps * rng.random_range(-1.0..1.0)),
        rotation: cayley_rotation(n, eps, rng),
        shift: random_unit(n, rng) * (eps * rng.random_range(0.5..1.0)),
    }
}

/// Support radius of the chart bump.
pub const BUMP_RADIUS: f64 = 0.6;

fn bump(n: usize, eps: f64, rng: &mut ChaCha8Rng) -> ChartBump {
    ChartBump {
        center: random_unit(n, rng) * rng.random_range(0.0..0.3),
        radius: BUMP_RADIUS,
        displacement: random_unit(n, rng) * (eps * BUMP_RADIUS),
    }
}

struct NoneFamily;
struct ConformalFamily;
struct BumpFamily;
struct MixedFamily;

impl PerturbationFamily for NoneFamily {
    fn name(&self) -> &'static str {
        "none"
    }

    fn build(&self, _n: usize, _eps: f64, _rng: &mut ChaCha8Rng) -> Box<dyn SphereMap> {
        Box::new(IdentityMap)
    }
}

impl PerturbationFamily for ConformalFamily {
    fn name(&self) -> &'static str {
        "conformal"
    }

    fn build(&self, n: usize, eps: f64, rng: &mut ChaCha8Rng) -> Box<dyn SphereMap> {
        if eps == 0.0 {
            return Box::new(IdentityMap);
        }
        Box::new(similarity(n, eps, rng))
    }
}

impl PerturbationFamily for BumpFamily {
    fn name(&self) -> &'static str {
        "bump"
    }

    fn build(&self, n: usize, eps: f64, rng: &mut ChaCha8Rng) -> Box<dyn SphereMap> {
        if eps == 0.0 {
            return Box::new(IdentityMap);
        }
        Box::new(bump(n, eps, rng))
    }
}

impl PerturbationFamily for MixedFamily {
    fn name(&self) -> &'static str {
        "mixed"
    }

    fn build(&self, n: usize, eps: f64, rng: &mut ChaCha8Rng) -> Box<dyn SphereMap> {
        if eps == 0.0 {
            return Box::new(IdentityMap);
        }
        let b = bump(n, eps, rng);
        let s = similarity(n, eps, rng);
        Box::new(Composite {
            maps: vec![Box::new(b), Box::new(s)],
        })
    }
}

/// All registered perturbation families.
pub fn perturbation_families() -> Vec<Box<dyn PerturbationFamily>> {
    vec![
        Box::new(NoneFamily),
        Box::new(ConformalFamily),
        Box::new(BumpFamily),
        Box::new(MixedFamily),
    ]
}

pub fn perturbation_family(name: &str) -> Result<Box<dyn PerturbationFamily>> {
    perturbation_families()
        .into_iter()
        .find(|f| f.name() == name)
        .ok_or_else(|| {
            let names: Vec<&str> = perturbation_families().iter().map(|f| f.name()).collect();
            Error::Parameter(format!("unknown perturbation family '{name}' (known: {})", names.join(", ")))
        })
}

/// The action `h ∘ ρ_{B'} ∘ h^-1`. The ground truth `B'` and `h` are kept for
/// scoring; recovery only sees the [`SphereAction`] interface.
#[derive(Debug)]
pub struct PerturbedAction {
    spec: ActionSpec,
    map: Box<dyn SphereMap>,
    family: String,
    eps: f64,
}

impl PerturbedAction {
    pub fn new(spec: ActionSpec, map: Box<dyn SphereMap>, family: &str, eps: f64) -> Self {
        Self {
            spec,
            map,
            family: family.to_string(),
            eps,
        }
    }

    pub fn ground_truth(&self) -> &ActionSpec {
        &self.spec
    }

    pub fn conjugator(&self) -> &dyn SphereMap {
        self.map.as_ref()
    }

    pub fn family(&self) -> &str {
        &self.family
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn k(&self) -> u32 {
        self.spec.k()
    }

    /// `h(∞)`.
    pub fn true_fixed_point(&self) -> SpherePoint {
        self.map
            .forward(&SpherePoint::infinity(self.spec.n()))
            .normalized(self.spec.switch_radius())
    }

    /// `h(p)`, normalized.
    pub fn conjugate_point(&self, p: &SpherePoint) -> SpherePoint {
        self.map.forward(p).normalized(self.spec.switch_radius())
    }
}

impl SphereAction for PerturbedAction {
    fn dim(&self) -> usize {
        self.spec.n()
    }

    /// One evaluation of `h ∘ ρ_{B'}(g^m) ∘ h^-1` for any power `m`.
    fn apply_letter(&self, letter: Letter, p: &SpherePoint) -> Result<SpherePoint> {
        check_dim(self.spec.n(), p.dim())?;
        let r = self.spec.switch_radius();
        let pulled = self.map.inverse(p).normalized(r);
        let moved = self.spec.apply_letter(letter, &pulled)?;
        Ok(self.map.forward(&moved).normalized(r))
    }
}

/// Synthesizes `h ∘ ρ_{B'} ∘ h^-1` with `h` drawn from a named family.
pub fn make_perturbation(spec: ActionSpec, family: &str, eps: f64, rng: &mut ChaCha8Rng) -> Result<PerturbedAction> {
    if !(0.0..=MAX_EPS).contains(&eps) {
        return Err(Error::Parameter(format!("perturbation size must be in [0, {MAX_EPS}], got {eps}")));
    }
    let fam = perturbation_family(family)?;
    let map = fam.build(spec.n(), eps, rng);
    Ok(PerturbedAction::new(spec, map, family, eps))
}
