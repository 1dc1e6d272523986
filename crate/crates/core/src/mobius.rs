//! The standard conformal action of `<a, b_1..b_n | a b_i a^-1 = b_i^k,
//! b_i b_j = b_j b_i>` on `S^n = R^n ∪ {∞}`: `a(x) = k x`,
//! `b_i(x) = x + v_i`, and its local jets at `∞` in the inversion chart
//! `x -> x / |x|^2`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, Error, Result};
use crate::jets::Jet3;
use crate::symtensor::{make_q, BasisMatrix, SymMultiMap};

/// Affine norm above which points are stored in the chart at infinity.
pub const DEFAULT_SWITCH_RADIUS: f64 = 1e6;

/// Inversion `x -> x / |x|^2`; an involution of `R^n \ {0}`.
pub fn invert_chart(x: &DVector<f64>) -> DVector<f64> {
    x / x.norm_squared()
}

/// A point of `S^n`.
///
/// `Finite(x)` is the affine point `x`; `Chart(y)` is the point with
/// inversion-chart coordinate `y`, i.e. the affine point `y / |y|^2`, and
/// `Chart(0)` is `∞`. Points far from the origin are kept in the chart so
/// that long words do not overflow.
#[derive(Debug, Clone, PartialEq)]
pub enum SpherePoint {
    Finite(DVector<f64>),
    Chart(DVector<f64>),
}

impl SpherePoint {
    pub fn infinity(n: usize) -> Self {
        SpherePoint::Chart(DVector::zeros(n))
    }

    pub fn dim(&self) -> usize {
        match self {
            SpherePoint::Finite(x) | SpherePoint::Chart(x) => x.len(),
        }
    }

    pub fn is_infinity(&self) -> bool {
        matches!(self, SpherePoint::Chart(y) if y.iter().all(|&c| c == 0.0))
    }

    /// Affine coordinates, `None` at `∞`.
    pub fn affine(&self) -> Option<DVector<f64>> {
        match self {
            SpherePoint::Finite(x) => Some(x.clone()),
            SpherePoint::Chart(_) if self.is_infinity() => None,
            SpherePoint::Chart(y) => Some(invert_chart(y)),
        }
    }

    /// Inversion-chart coordinates, `None` at the affine origin.
    pub fn chart(&self) -> Option<DVector<f64>> {
        match self {
            SpherePoint::Chart(y) => Some(y.clone()),
            SpherePoint::Finite(x) if x.iter().all(|&c| c == 0.0) => None,
            SpherePoint::Finite(x) => Some(invert_chart(x)),
        }
    }

    /// Re-tags the point so that it is stored in the affine chart iff its
    /// affine norm is at most `radius`.
    pub fn normalized(self, radius: f64) -> Self {
        match self {
            SpherePoint::Finite(x) if x.norm() > radius => SpherePoint::Chart(invert_chart(&x)),
            SpherePoint::Chart(y) if !y.is_empty() && y.norm() * radius > 1.0 => SpherePoint::Finite(invert_chart(&y)),
            p => p,
        }
    }

    /// Point of the unit sphere in `R^{n+1}` under inverse stereographic
    /// projection, `∞` going to the north pole.
    pub fn embed(&self) -> DVector<f64> {
        let n = self.dim();
        let (coords, s, sign) = match self {
            SpherePoint::Finite(x) => (x, x.norm_squared(), 1.0),
            SpherePoint::Chart(y) => (y, y.norm_squared(), -1.0),
        };
        let mut out = DVector::zeros(n + 1);
        for i in 0..n {
            out[i] = 2.0 * coords[i] / (1.0 + s);
        }
        out[n] = sign * (s - 1.0) / (s + 1.0);
        out
    }

    /// Euclidean distance in the shared chart when both points use the same
    /// one, chordal distance on the sphere otherwise.
    pub fn distance(&self, other: &SpherePoint) -> f64 {
        match (self, other) {
            (SpherePoint::Finite(x), SpherePoint::Finite(z)) | (SpherePoint::Chart(x), SpherePoint::Chart(z)) => (x - z).norm(),
            _ => (self.embed() - other.embed()).norm(),
        }
    }

    /// Chart distance divided by `max(1, |p|, |q|)`.
    pub fn relative_distance(&self, other: &SpherePoint) -> f64 {
        match (self, other) {
            (SpherePoint::Finite(x), SpherePoint::Finite(z)) | (SpherePoint::Chart(x), SpherePoint::Chart(z)) => {
                (x - z).norm() / 1f64.max(x.norm()).max(z.norm())
            }
            _ => (self.embed() - other.embed()).norm(),
        }
    }
}

/// A generator of the group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Generator {
    A,
    /// `b_{i+1}`; the index is 0-based.
    B(usize),
}

/// A generator raised to a non-zero integer power.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Letter {
    pub generator: Generator,
    pub exponent: i64,
}

impl Letter {
    pub fn new(generator: Generator, exponent: i64) -> Self {
        Self { generator, exponent }
    }

    pub fn inverse(self) -> Self {
        Self::new(self.generator, -self.exponent)
    }
}

impl fmt::Display for Letter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.generator {
            Generator::A => write!(f, "a")?,
            Generator::B(i) => write!(f, "b{}", i + 1)?,
        }
        if self.exponent != 1 {
            write!(f, "^{}", self.exponent)?;
        }
        Ok(())
    }
}

impl FromStr for Letter {
    type Err = Error;

    /// `a`, `a^-1`, `b2`, `b1^3`, ...
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidToken(s.to_string());
        let (base, exp) = match s.split_once('^') {
            Some((b, e)) => (b, e.parse::<i64>().map_err(|_| bad())?),
            None => (s, 1),
        };
        let generator = if base == "a" {
            Generator::A
        } else if let Some(idx) = base.strip_prefix('b') {
            let i: usize = idx.parse().map_err(|_| bad())?;
            if i == 0 {
                return Err(bad());
            }
            Generator::B(i - 1)
        } else {
            return Err(bad());
        };
        Ok(Letter::new(generator, exp))
    }
}

/// A word in the generators. As a map, the rightmost letter acts first:
/// `a b1 a^-1` sends `x` to `k (x / k + v_1) = x + k v_1`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct GroupWord {
    letters: Vec<Letter>,
}

impl GroupWord {
    pub fn new(letters: Vec<Letter>) -> Self {
        Self {
            letters: letters.into_iter().filter(|l| l.exponent != 0).collect(),
        }
    }

    pub fn identity() -> Self {
        Self::default()
    }

    pub fn letter(generator: Generator, exponent: i64) -> Self {
        Self::new(vec![Letter::new(generator, exponent)])
    }

    pub fn letters(&self) -> &[Letter] {
        &self.letters
    }

    pub fn is_empty(&self) -> bool {
        self.letters.is_empty()
    }

    pub fn inverse(&self) -> Self {
        Self::new(self.letters.iter().rev().map(|l| l.inverse()).collect())
    }

    /// `self · other` (apply `other` first).
    pub fn then_after(&self, other: &GroupWord) -> Self {
        let mut letters = self.letters.clone();
        letters.extend_from_slice(&other.letters);
        Self::new(letters)
    }

    /// Errors if a `b_i` index exceeds `n`.
    pub fn validate(&self, n: usize) -> Result<()> {
        for l in &self.letters {
            if let Generator::B(i) = l.generator {
                if i >= n {
                    return Err(Error::InvalidToken(format!("{l} (dimension is {n})")));
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for GroupWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.letters.is_empty() {
            return write!(f, "1");
        }
        let parts: Vec<String> = self.letters.iter().map(|l| l.to_string()).collect();
        write!(f, "{}", parts.join(" "))
    }
}

impl FromStr for GroupWord {
    type Err = Error;

    /// Whitespace- or `*`-separated letters; `1` or the empty string is the
    /// identity.
    fn from_str(s: &str) -> Result<Self> {
        let letters = s
            .split(|c: char| c.is_whitespace() || c == '*')
            .filter(|t| !t.is_empty() && *t != "1")
            .map(Letter::from_str)
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::new(letters))
    }
}

/// An action of the group on `S^n` by (possibly non-conformal)
/// diffeomorphisms.
pub trait SphereAction: Send + Sync {
    fn dim(&self) -> usize;

    /// `ρ(g^m)(p)` for a single generator power.
    fn apply_letter(&self, letter: Letter, p: &SpherePoint) -> Result<SpherePoint>;

    fn apply_word(&self, word: &GroupWord, p: &SpherePoint) -> Result<SpherePoint> {
        word.validate(self.dim())?;
        check_dim(self.dim(), p.dim())?;
        let mut q = p.clone();
        for l in word.letters().iter().rev() {
            q = self.apply_letter(*l, &q)?;
        }
        Ok(q)
    }
}

/// Parameters of the standard action `ρ_B`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSpec {
    k: u32,
    basis: BasisMatrix,
    switch_radius: f64,
}

impl ActionSpec {
    pub fn new(k: u32, basis: BasisMatrix) -> Result<Self> {
        if basis.dim() < 2 {
            return Err(Error::Parameter(format!("dimension must be at least 2, got {}", basis.dim())));
        }
        if k < 2 {
            return Err(Error::Parameter(format!("k must be at least 2, got {k}")));
        }
        Ok(Self {
            k,
            basis,
            switch_radius: DEFAULT_SWITCH_RADIUS,
        })
    }

    pub fn with_switch_radius(mut self, radius: f64) -> Result<Self> {
        if !(radius.is_finite() && radius > 1.0) {
            return Err(Error::Parameter(format!("switch radius must exceed 1, got {radius}")));
        }
        self.switch_radius = radius;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.basis.dim()
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn basis(&self) -> &BasisMatrix {
        &self.basis
    }

    pub fn switch_radius(&self) -> f64 {
        self.switch_radius
    }

    pub fn generator_words(&self) -> Vec<GroupWord> {
        let mut out = vec![GroupWord::letter(Generator::A, 1)];
        out.extend((0..self.n()).map(|i| GroupWord::letter(Generator::B(i), 1)));
        out
    }

    /// Generators and their inverses.
    pub fn symmetric_generators(&self) -> Vec<Letter> {
        let mut out = Vec::new();
        out.push(Letter::new(Generator::A, 1));
        out.push(Letter::new(Generator::A, -1));
        for i in 0..self.n() {
            out.push(Letter::new(Generator::B(i), 1));
            out.push(Letter::new(Generator::B(i), -1));
        }
        out
    }
}

/// Chart-side translation `y -> φ(φ(y) + v)` with `φ` the inversion:
/// `(y + |y|^2 v) / (1 + 2 <y, v> + |v|^2 |y|^2)`.
pub fn chart_translate(y: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
    let s = y.norm_squared();
    let denom = 1.0 + 2.0 * y.dot(v) + v.norm_squared() * s;
    (y + v * s) / denom
}

impl SphereAction for ActionSpec {
    fn dim(&self) -> usize {
        self.n()
    }

    fn apply_letter(&self, letter: Letter, p: &SpherePoint) -> Result<SpherePoint> {
        check_dim(self.n(), p.dim())?;
        let m = letter.exponent;
        let q = match letter.generator {
            Generator::A => {
                let factor = (self.k as f64).powi(m as i32);
                match p {
                    SpherePoint::Finite(x) => SpherePoint::Finite(x * factor),
                    SpherePoint::Chart(y) => SpherePoint::Chart(y / factor),
                }
            }
            Generator::B(i) => {
                if i >= self.n() {
                    return Err(Error::InvalidToken(format!("{letter} (dimension is {})", self.n())));
                }
                let v = self.basis.vector(i) * (m as f64);
                match p {
                    SpherePoint::Finite(x) => SpherePoint::Finite(x + v),
                    // Stay in the chart while the translation is small
                    // compared with the affine norm of the point.
                    SpherePoint::Chart(y) if y.norm() * v.norm() < 0.5 => SpherePoint::Chart(chart_translate(y, &v)),
                    SpherePoint::Chart(y) => SpherePoint::Finite(invert_chart(y) + v),
                }
            }
        };
        Ok(q.normalized(self.switch_radius))
    }
}

/// Largest relative deviation between the two sides of each defining
/// relation.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct RelationReport {
    pub max_deviation: f64,
    /// `(relation, max deviation over samples)`.
    pub relations: Vec<(String, f64)>,
    pub samples: usize,
}

/// The defining relations as pairs of words `(lhs, rhs)`.
pub fn relations(n: usize, k: u32) -> Vec<(GroupWord, GroupWord)> {
    let mut out = Vec::new();
    for i in 0..n {
        out.push((
            GroupWord::new(vec![
                Letter::new(Generator::A, 1),
                Letter::new(Generator::B(i), 1),
                Letter::new(Generator::A, -1),
            ]),
            GroupWord::letter(Generator::B(i), k as i64),
        ));
    }
    for i in 0..n {
        for j in i + 1..n {
            out.push((
                GroupWord::new(vec![Letter::new(Generator::B(i), 1), Letter::new(Generator::B(j), 1)]),
                GroupWord::new(vec![Letter::new(Generator::B(j), 1), Letter::new(Generator::B(i), 1)]),
            ));
        }
    }
    out
}

/// Evaluates both sides of every relation on the samples.
pub fn verify_relations(action: &dyn SphereAction, k: u32, samples: &[SpherePoint]) -> Result<RelationReport> {
    let mut rels = Vec::new();
    let mut max_deviation: f64 = 0.0;
    for (lhs, rhs) in relations(action.dim(), k) {
        let mut worst: f64 = 0.0;
        for p in samples {
            let l = action.apply_word(&lhs, p)?;
            let r = action.apply_word(&rhs, p)?;
            worst = worst.max(l.relative_distance(&r));
        }
        max_deviation = max_deviation.max(worst);
        rels.push((format!("{lhs} = {rhs}"), worst));
    }
    Ok(RelationReport {
        max_deviation,
        relations: rels,
        samples: samples.len(),
    })
}

/// Gaussian affine samples together with `∞` and a few points close to it.
pub fn relation_samples(n: usize, count: usize, rng: &mut impl Rng) -> Vec<SpherePoint> {
    let mut out: Vec<SpherePoint> = (0..count)
        .map(|_| SpherePoint::Finite(DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))))
        .collect();
    out.push(SpherePoint::infinity(n));
    for scale in [1e-7, 1e-10] {
        out.push(SpherePoint::Chart(DVector::from_fn(n, |_, _| scale * rng.sample::<f64, _>(StandardNormal))));
    }
    out
}

/// Jet at `0` of `y -> φ(φ(y) + v)`: linear part `I`, quadratic part
/// `2 Q_v`, cubic part the symmetrization of
/// `6 (-|v|^2 <x, y> z + 4 <x, v> <y, v> z - 2 <x, v> <y, z> v)`.
pub fn translation_chart_jet(v: &DVector<f64>) -> Jet3 {
    let n = v.len();
    let vv = v.norm_squared();
    let cubic = SymMultiMap::symmetrized(n, 3, |idx| {
        let (x, y, z) = (idx[0], idx[1], idx[2]);
        let mut out = DVector::zeros(n);
        if x == y {
            out[z] -= 6.0 * vv;
        }
        out[z] += 24.0 * v[x] * v[y];
        if y == z {
            out -= v * (12.0 * v[x]);
        }
        out
    });
    Jet3::new(SymMultiMap::identity(n), make_q(v).scaled(2.0), cubic).expect("identity linear part")
}

/// Jet at `∞` (in the inversion chart) of the standard action of a
/// generator power.
pub fn local_jet(spec: &ActionSpec, letter: Letter) -> Result<Jet3> {
    match letter.generator {
        Generator::A => Jet3::scaling(spec.n(), (spec.k() as f64).powi(-(letter.exponent as i32))),
        Generator::B(i) => {
            if i >= spec.n() {
                return Err(Error::InvalidToken(format!("{letter} (dimension is {})", spec.n())));
            }
            Ok(translation_chart_jet(&(spec.basis().vector(i) * letter.exponent as f64)))
        }
    }
}

/// Default domain radius for [`chart_at`], in inversion-chart coordinates.
pub const POINT_CHART_RADIUS: f64 = 0.5;

/// The chart `φ_p(q) = φ(q) - φ(p)` centred at a point `p` near `∞`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointChart {
    center: DVector<f64>,
}

pub fn chart_at(p: &SpherePoint) -> Result<PointChart> {
    chart_at_with_radius(p, POINT_CHART_RADIUS)
}

pub fn chart_at_with_radius(p: &SpherePoint, radius: f64) -> Result<PointChart> {
    let center = p
        .chart()
        .ok_or_else(|| Error::Precondition("the affine origin has no inversion-chart coordinate".into()))?;
    if center.norm() >= radius {
        return Err(Error::Precondition(format!(
            "point is outside the chart domain: |φ(p)| = {:.3e} >= {radius}",
            center.norm()
        )));
    }
    Ok(PointChart { center })
}

impl PointChart {
    pub fn center(&self) -> &DVector<f64> {
        &self.center
    }

    pub fn apply(&self, q: &SpherePoint) -> Result<DVector<f64>> {
        let y = q
            .chart()
            .ok_or_else(|| Error::Precondition("the affine origin has no inversion-chart coordinate".into()))?;
        Ok(y - &self.center)
    }

    pub fn inverse(&self, z: &DVector<f64>, switch_radius: f64) -> SpherePoint {
        SpherePoint::Chart(z + &self.center).normalized(switch_radius)
    }
}
