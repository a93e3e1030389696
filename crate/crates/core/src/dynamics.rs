//! Model measure-preserving systems acted on by ℤ or ℤᵈ, bounded
//! observables, orbit weights and weighted ergodic averages.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::folner::FolnerSeq;
use crate::group::{Elem, FiniteRegion, GroupModel, MAX_COORDS};
use crate::par;
use crate::rng::StreamKey;
use crate::sum::NeumaierSum;
use crate::torus::Phase;
use crate::weights::{
    alternating_weight, bernoulli_weight, constant_weight, cosine_weight, zero_weight, Provenance, WeightFn,
};

#[derive(Clone, Debug, PartialEq)]
pub enum SystemModel {
    /// `T¹` with `g·x = x + θ·g`; the acting group is `ℤ^{θ.len()}`.
    Rotation { theta: Vec<Phase> },
    /// `{±1}^{ℤ^dim}` with iid fair coordinates and the shift action.
    Bernoulli { dim: u8 },
    /// Diagonal action on a product.
    Product(Box<SystemModel>, Box<SystemModel>),
    /// `T²` with `(x, y) ↦ (x + θ, y + x)` generating a ℤ-action.
    Skew { theta: Phase },
}

#[derive(Clone, Debug, PartialEq)]
pub enum Point {
    Circle(Phase),
    /// Bernoulli point `ω` read through a shift: coordinate `h` is
    /// `ω_{offset + h}`.
    Shift {
        key: StreamKey,
        offset: Elem,
    },
    Torus2(Phase, Phase),
    Pair(Box<Point>, Box<Point>),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Observable {
    Const(f64),
    /// `cos(2πk·x)` on the circle coordinate (base coordinate of a skew product).
    Cos {
        k: i64,
    },
    Sin {
        k: i64,
    },
    /// `ω₀` on a Bernoulli shift.
    Coord,
    /// `cos(2πk·y)` on the fiber coordinate of a skew product.
    FiberCos {
        k: i64,
    },
    /// `φ(p₁)·ψ(p₂)` on a product system.
    Product(Box<Observable>, Box<Observable>),
    /// Linear combination.
    Sum(Vec<(f64, Observable)>),
}

fn is_rational_like(t: Phase) -> bool {
    (1..=10_000i64).any(|q| t.times(q).dist_to_zero() < 1e-12)
}

impl SystemModel {
    pub fn rotation(theta: &[f64]) -> Result<Self> {
        if theta.is_empty() || theta.len() > MAX_COORDS {
            return Err(Error::InvalidParam(format!(
                "rotation needs 1..={MAX_COORDS} frequencies"
            )));
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidParam("rotation frequency must be finite".into()));
        }
        Ok(SystemModel::Rotation {
            theta: theta.iter().map(|&t| Phase::from_f64(t)).collect(),
        })
    }

    pub fn bernoulli(dim: u8) -> Result<Self> {
        if dim == 0 || dim as usize > MAX_COORDS {
            return Err(Error::InvalidParam(format!(
                "Bernoulli shift dimension {dim} not in 1..={MAX_COORDS}"
            )));
        }
        Ok(SystemModel::Bernoulli { dim })
    }

    pub fn product(a: SystemModel, b: SystemModel) -> Result<Self> {
        if a.group() != b.group() {
            return Err(Error::ModelMismatch(format!(
                "product of {} and {} actions",
                a.group(),
                b.group()
            )));
        }
        Ok(SystemModel::Product(Box::new(a), Box::new(b)))
    }

    pub fn skew(theta: f64) -> Result<Self> {
        if !theta.is_finite() {
            return Err(Error::InvalidParam("skew frequency must be finite".into()));
        }
        Ok(SystemModel::Skew {
            theta: Phase::from_f64(theta),
        })
    }

    /// The acting group.
    pub fn group(&self) -> GroupModel {
        let d = match self {
            SystemModel::Rotation { theta } => theta.len(),
            SystemModel::Bernoulli { dim } => *dim as usize,
            SystemModel::Product(a, _) => a.group().dims(),
            SystemModel::Skew { .. } => 1,
        };
        if d == 1 {
            GroupModel::IntLine
        } else {
            GroupModel::IntGrid { dim: d as u8 }
        }
    }

    /// Point drawn from the invariant measure, keyed by `key`.
    pub fn sample_point(&self, key: StreamKey) -> Point {
        match self {
            SystemModel::Rotation { .. } => Point::Circle(Phase(key.bits(0))),
            SystemModel::Bernoulli { .. } => Point::Shift {
                key: key.derive(1),
                offset: Elem::IDENTITY,
            },
            SystemModel::Skew { .. } => Point::Torus2(Phase(key.bits(0)), Phase(key.bits(1))),
            SystemModel::Product(a, b) => Point::Pair(
                Box::new(a.sample_point(key.derive(2))),
                Box::new(b.sample_point(key.derive(3))),
            ),
        }
    }

    /// Point from explicit circle coordinates (rotation, skew product) or a
    /// seed (Bernoulli), recursively for products.
    pub fn point_from_coords(&self, coords: &[f64], seed: u64) -> Result<Point> {
        match self {
            SystemModel::Rotation { .. } if coords.len() == 1 => Ok(Point::Circle(Phase::from_f64(coords[0]))),
            SystemModel::Skew { .. } if coords.len() == 2 => {
                Ok(Point::Torus2(Phase::from_f64(coords[0]), Phase::from_f64(coords[1])))
            }
            SystemModel::Bernoulli { .. } if coords.is_empty() => Ok(self.sample_point(StreamKey::new(seed))),
            SystemModel::Product(a, b) => {
                let na = a.coord_count();
                if coords.len() != na + b.coord_count() {
                    return Err(Error::InvalidParam(
                        "wrong number of point coordinates for product".into(),
                    ));
                }
                Ok(Point::Pair(
                    Box::new(a.point_from_coords(&coords[..na], seed)?),
                    Box::new(b.point_from_coords(&coords[na..], seed.wrapping_add(1))?),
                ))
            }
            _ => Err(Error::InvalidParam(format!(
                "{self} takes {} point coordinates, got {}",
                self.coord_count(),
                coords.len()
            ))),
        }
    }

    fn coord_count(&self) -> usize {
        match self {
            SystemModel::Rotation { .. } => 1,
            SystemModel::Bernoulli { .. } => 0,
            SystemModel::Skew { .. } => 2,
            SystemModel::Product(a, b) => a.coord_count() + b.coord_count(),
        }
    }

    fn owns_point(&self, p: &Point) -> bool {
        matches!(
            (self, p),
            (SystemModel::Rotation { .. }, Point::Circle(_))
                | (SystemModel::Bernoulli { .. }, Point::Shift { .. })
                | (SystemModel::Skew { .. }, Point::Torus2(..))
        ) || match (self, p) {
            (SystemModel::Product(a, b), Point::Pair(pa, pb)) => a.owns_point(pa) && b.owns_point(pb),
            _ => false,
        }
    }

    /// Whether `f` is defined on this system.
    pub fn supports(&self, f: &Observable) -> bool {
        match (self, f) {
            (_, Observable::Const(_)) => true,
            (_, Observable::Sum(terms)) => terms.iter().all(|(_, t)| self.supports(t)),
            (SystemModel::Rotation { .. }, Observable::Cos { .. } | Observable::Sin { .. }) => true,
            (
                SystemModel::Skew { .. },
                Observable::Cos { .. } | Observable::Sin { .. } | Observable::FiberCos { .. },
            ) => true,
            (SystemModel::Bernoulli { .. }, Observable::Coord) => true,
            (SystemModel::Product(a, b), Observable::Product(fa, fb)) => a.supports(fa) && b.supports(fb),
            _ => false,
        }
    }

    fn check(&self, f: &Observable, p: &Point) -> Result<()> {
        if !self.supports(f) {
            return Err(Error::Unsupported(format!("observable {f} on system {self}")));
        }
        if !self.owns_point(p) {
            return Err(Error::Unsupported(format!("point {p:?} is not in system {self}")));
        }
        if f.sup_bound() > 1.0 + 1e-12 {
            return Err(Error::InvalidParam(format!("observable {f} is not bounded by 1")));
        }
        Ok(())
    }

    /// `f(g·x)`; the caller guarantees compatibility (see [`eval`]).
    fn eval_unchecked(&self, f: &Observable, x: &Point, g: &Elem) -> f64 {
        match f {
            Observable::Const(v) => return *v,
            Observable::Sum(terms) => return terms.iter().map(|(c, t)| c * self.eval_unchecked(t, x, g)).sum(),
            _ => {}
        }
        match (self, x) {
            (SystemModel::Rotation { theta }, Point::Circle(x0)) => {
                let c = g.coords();
                let mut p = *x0;
                for (t, &n) in theta.iter().zip(&c) {
                    p = p.add(t.times(n));
                }
                circle_obs(f, p)
            }
            (SystemModel::Skew { theta }, Point::Torus2(x0, y0)) => {
                let n = g.x();
                match f {
                    Observable::FiberCos { k } => {
                        // y_n = y + n·x + θ·n(n−1)/2
                        let tri = (n as i128) * (n as i128 - 1) / 2;
                        let y = y0.add(x0.times(n)).add(theta.times_wide(tri));
                        y.times(*k).cos()
                    }
                    _ => circle_obs(f, x0.add(theta.times(n))),
                }
            }
            (SystemModel::Bernoulli { .. }, Point::Shift { key, offset }) => {
                let h = GroupModel::IntGrid { dim: MAX_COORDS as u8 }.multiply(offset, g);
                key.sign_at(&h)
            }
            (SystemModel::Product(a, b), Point::Pair(pa, pb)) => match f {
                Observable::Product(fa, fb) => a.eval_unchecked(fa, pa, g) * b.eval_unchecked(fb, pb, g),
                _ => unreachable!("checked by supports"),
            },
            _ => unreachable!("checked by owns_point"),
        }
    }

    /// `f(g·x)`.
    pub fn eval(&self, f: &Observable, x: &Point, g: &Elem) -> Result<f64> {
        self.check(f, x)?;
        if !self.group().owns(g) {
            return Err(Error::ModelMismatch(format!("{g:?} does not act on {self}")));
        }
        Ok(self.eval_unchecked(f, x, g))
    }

    /// `g ↦ f(g·x)`, validated once.
    pub fn orbit_fn<'a>(&'a self, f: &'a Observable, x: &'a Point) -> Result<impl Fn(&Elem) -> f64 + Sync + Send + 'a> {
        self.check(f, x)?;
        Ok(move |g: &Elem| self.eval_unchecked(f, x, g))
    }

    /// `g·x`.
    pub fn act(&self, x: &Point, g: &Elem) -> Result<Point> {
        if !self.owns_point(x) {
            return Err(Error::Unsupported(format!("point {x:?} is not in system {self}")));
        }
        Ok(match (self, x) {
            (SystemModel::Rotation { theta }, Point::Circle(x0)) => {
                let c = g.coords();
                Point::Circle(theta.iter().zip(&c).fold(*x0, |p, (t, &n)| p.add(t.times(n))))
            }
            (SystemModel::Skew { theta }, Point::Torus2(x0, y0)) => {
                let n = g.x();
                let tri = (n as i128) * (n as i128 - 1) / 2;
                Point::Torus2(x0.add(theta.times(n)), y0.add(x0.times(n)).add(theta.times_wide(tri)))
            }
            (SystemModel::Bernoulli { .. }, Point::Shift { key, offset }) => Point::Shift {
                key: *key,
                offset: GroupModel::IntGrid { dim: MAX_COORDS as u8 }.multiply(offset, g),
            },
            (SystemModel::Product(a, b), Point::Pair(pa, pb)) => {
                Point::Pair(Box::new(a.act(pa, g)?), Box::new(b.act(pb, g)?))
            }
            _ => unreachable!("checked by owns_point"),
        })
    }

    /// `∫f dμ` in closed form.
    pub fn integral(&self, f: &Observable) -> Result<f64> {
        if !self.supports(f) {
            return Err(Error::Unsupported(format!("observable {f} on system {self}")));
        }
        Ok(match (self, f) {
            (_, Observable::Const(v)) => *v,
            (_, Observable::Sum(terms)) => {
                let mut s = 0.0;
                for (c, t) in terms {
                    s += c * self.integral(t)?;
                }
                s
            }
            (_, Observable::Cos { k }) | (_, Observable::FiberCos { k }) => {
                if *k == 0 {
                    1.0
                } else {
                    0.0
                }
            }
            (_, Observable::Sin { .. }) | (_, Observable::Coord) => 0.0,
            (SystemModel::Product(a, b), Observable::Product(fa, fb)) => a.integral(fa)? * b.integral(fb)?,
            _ => unreachable!("checked by supports"),
        })
    }

    fn has_discrete_spectrum(&self) -> bool {
        match self {
            SystemModel::Rotation { .. } => true,
            SystemModel::Product(a, b) => a.has_discrete_spectrum() && b.has_discrete_spectrum(),
            _ => false,
        }
    }

    fn is_weakly_mixing(&self) -> bool {
        match self {
            SystemModel::Bernoulli { .. } => true,
            SystemModel::Product(a, b) => a.is_weakly_mixing() && b.is_weakly_mixing(),
            _ => false,
        }
    }

    fn ergodicity_unclear(&self) -> Option<String> {
        match self {
            SystemModel::Rotation { theta } if theta.iter().all(|t| is_rational_like(*t)) => {
                Some(format!("{self} has rational frequencies and is not ergodic"))
            }
            SystemModel::Skew { theta } if is_rational_like(*theta) => {
                Some(format!("{self} has a rational base frequency and is not ergodic"))
            }
            SystemModel::Product(a, b) => a.ergodicity_unclear().or_else(|| b.ergodicity_unclear()),
            _ => None,
        }
    }
}

fn circle_obs(f: &Observable, p: Phase) -> f64 {
    match f {
        Observable::Cos { k } => p.times(*k).cos(),
        Observable::Sin { k } => p.times(*k).sin(),
        _ => unreachable!("circle observable"),
    }
}

impl Observable {
    /// `sup |f|` bound implied by the form of `f`.
    pub fn sup_bound(&self) -> f64 {
        match self {
            Observable::Const(v) => v.abs(),
            Observable::Product(a, b) => a.sup_bound() * b.sup_bound(),
            Observable::Sum(terms) => terms.iter().map(|(c, t)| c.abs() * t.sup_bound()).sum(),
            _ => 1.0,
        }
    }

    fn is_zero(&self) -> bool {
        matches!(self, Observable::Const(v) if *v == 0.0)
    }
}

/// Closed-form split `f = f_kr + f_perp` into its Kronecker part and the
/// part orthogonal to the Kronecker factor.
pub fn kronecker_project(sys: &SystemModel, f: &Observable) -> Result<(Observable, Observable)> {
    if !sys.supports(f) {
        return Err(Error::Unsupported(format!("observable {f} on system {sys}")));
    }
    if let Some(why) = sys.ergodicity_unclear() {
        return Err(Error::NoAnalyticDecomposition(why));
    }
    let zero = Observable::Const(0.0);
    let kr_only = |f: &Observable| (f.clone(), Observable::Const(0.0));
    match (sys, f) {
        (_, Observable::Const(_)) => Ok(kr_only(f)),
        (_, Observable::Sum(terms)) => {
            let mut kr = Vec::new();
            let mut perp = Vec::new();
            for (c, t) in terms {
                let (a, b) = kronecker_project(sys, t)?;
                if !a.is_zero() {
                    kr.push((*c, a));
                }
                if !b.is_zero() {
                    perp.push((*c, b));
                }
            }
            let wrap = |v: Vec<(f64, Observable)>| {
                if v.is_empty() {
                    Observable::Const(0.0)
                } else {
                    Observable::Sum(v)
                }
            };
            Ok((wrap(kr), wrap(perp)))
        }
        (SystemModel::Rotation { .. }, _) => Ok(kr_only(f)),
        (SystemModel::Bernoulli { .. }, Observable::Coord) => Ok((zero, f.clone())),
        (SystemModel::Skew { .. }, Observable::Cos { .. } | Observable::Sin { .. }) => Ok(kr_only(f)),
        (SystemModel::Skew { .. }, Observable::FiberCos { k }) => {
            if *k == 0 {
                Ok(kr_only(f))
            } else {
                Ok((zero, f.clone()))
            }
        }
        (SystemModel::Product(a, b), Observable::Product(fa, fb)) => {
            let catalog =
                a.has_discrete_spectrum() && b.has_discrete_spectrum() || a.is_weakly_mixing() || b.is_weakly_mixing();
            if !catalog {
                return Err(Error::NoAnalyticDecomposition(format!("{sys}")));
            }
            let (ka, _) = kronecker_project(a, fa)?;
            let (kb, _) = kronecker_project(b, fb)?;
            // every catalog factor projects to itself or to zero
            if ka.is_zero() || kb.is_zero() {
                Ok((zero, f.clone()))
            } else if ka == **fa && kb == **fb {
                Ok(kr_only(f))
            } else {
                Err(Error::NoAnalyticDecomposition(format!("{f} on {sys}")))
            }
        }
        _ => Err(Error::NoAnalyticDecomposition(format!("{f} on {sys}"))),
    }
}

/// The weight `g ↦ f(g·x)` on `window`.
pub fn orbit_weight(sys: &SystemModel, f: &Observable, x: &Point, window: FiniteRegion) -> Result<WeightFn> {
    sys.check(f, x)?;
    if window.model() != sys.group() {
        return Err(Error::ModelMismatch(format!(
            "window on {} for a {} action",
            window.model(),
            sys.group()
        )));
    }
    WeightFn::from_fn(window, Provenance::Orbit, |g| sys.eval_unchecked(f, x, g))
}

fn mean_over<F>(f_n: &FiniteRegion, term: F) -> f64
where
    F: Fn(&Elem) -> f64 + Sync + Send,
{
    let total = match f_n.as_index_range() {
        Some((lo, hi)) => par::sum_range((hi - lo + 1) as usize, |i| term(&Elem::int(lo + i as i64))),
        None => {
            let els = f_n.elements();
            par::sum_range(els.len(), |i| term(&els[i]))
        }
    };
    total / f_n.len() as f64
}

fn check_inside(c: &WeightFn, f_n: &FiniteRegion) -> Result<()> {
    if f_n.is_empty() {
        return Err(Error::Empty("averaging set"));
    }
    if c.model() != f_n.model() {
        return Err(Error::ModelMismatch(
            "weight and averaging set live on different groups".into(),
        ));
    }
    if !f_n.is_subset(c.domain()) {
        let e = f_n
            .iter()
            .find(|e| c.value(e).is_none())
            .copied()
            .unwrap_or(Elem::IDENTITY);
        return Err(Error::OutOfWindow {
            elem: e,
            context: "averaging set leaves the weight window".into(),
        });
    }
    Ok(())
}

/// `E_{g∈F_N} c(g)·f(g·y)`.
pub fn weighted_average(c: &WeightFn, sys: &SystemModel, f: &Observable, y: &Point, f_n: &FiniteRegion) -> Result<f64> {
    sys.check(f, y)?;
    check_inside(c, f_n)?;
    if sys.group() != f_n.model() {
        return Err(Error::ModelMismatch(format!(
            "averaging set on {} for a {} action",
            f_n.model(),
            sys.group()
        )));
    }
    Ok(mean_over(f_n, |g| {
        c.value(g).unwrap_or(0.0) * sys.eval_unchecked(f, y, g)
    }))
}

/// A character `g ↦ e^{2πi θ·g}` of ℤᵈ.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CharacterId {
    pub theta: Vec<f64>,
}

impl CharacterId {
    pub fn new(theta: Vec<f64>) -> Result<Self> {
        if theta.is_empty() || theta.len() > MAX_COORDS {
            return Err(Error::InvalidParam(format!(
                "character needs 1..={MAX_COORDS} frequencies"
            )));
        }
        if let Some(t) = theta.iter().find(|t| !(0.0..1.0).contains(*t)) {
            return Err(Error::InvalidParam(format!("character frequency {t} not in [0, 1)")));
        }
        Ok(CharacterId { theta })
    }

    fn phase(&self, g: &Elem) -> Phase {
        let c = g.coords();
        self.theta
            .iter()
            .zip(&c)
            .fold(Phase::ZERO, |p, (&t, &n)| p.add(Phase::from_f64(t).times(n)))
    }
}

/// `E_{g∈F_N} c(g)·e^{2πi θ·g}`.
pub fn character_average(c: &WeightFn, chi: &CharacterId, f_n: &FiniteRegion) -> Result<Complex64> {
    check_inside(c, f_n)?;
    if chi.theta.len() != f_n.model().dims() || !matches!(f_n.model(), GroupModel::IntLine | GroupModel::IntGrid { .. })
    {
        return Err(Error::ModelMismatch(format!(
            "character of ℤ^{} on {}",
            chi.theta.len(),
            f_n.model()
        )));
    }
    let thetas: Vec<Phase> = chi.theta.iter().map(|&t| Phase::from_f64(t)).collect();
    let phase = |g: &Elem| {
        let co = g.coords();
        thetas.iter().zip(&co).fold(Phase::ZERO, |p, (t, &n)| p.add(t.times(n)))
    };
    debug_assert_eq!(phase(&Elem::int(3)), chi.phase(&Elem::int(3)));
    let re = mean_over(f_n, |g| c.value(g).unwrap_or(0.0) * phase(g).cos());
    let im = mean_over(f_n, |g| c.value(g).unwrap_or(0.0) * phase(g).sin());
    Ok(Complex64::new(re, im))
}

/// `max_{N ∈ window} |E_{g∈F_N} f(g·x) − ∫f|`.
pub fn genericity_gap(
    sys: &SystemModel,
    f: &Observable,
    x: &Point,
    seq: &FolnerSeq,
    window: (usize, usize),
) -> Result<f64> {
    sys.check(f, x)?;
    let mean = sys.integral(f)?;
    if seq.model() != sys.group() {
        return Err(Error::ModelMismatch(format!(
            "sequence on {} for a {} action",
            seq.model(),
            sys.group()
        )));
    }
    if window.0 == 0 || window.0 > window.1 || window.1 > seq.len() {
        return Err(Error::InvalidParam(format!(
            "window {window:?} not within 1..={}",
            seq.len()
        )));
    }
    let mut gap = 0.0f64;
    if seq.is_nested() {
        let mut s = NeumaierSum::new();
        let mut size = 0usize;
        for (k, inc) in seq.increments(window.1)?.iter().enumerate() {
            for g in inc {
                s.add(sys.eval_unchecked(f, x, g));
            }
            size += inc.len();
            if k + 1 >= window.0 {
                gap = gap.max((s.value() / size as f64 - mean).abs());
            }
        }
    } else {
        for n in window.0..=window.1 {
            let f_n = seq.set(n)?;
            gap = gap.max((mean_over(&f_n, |g| sys.eval_unchecked(f, x, g)) - mean).abs());
        }
    }
    Ok(gap)
}

/// Geometric ladder `start, 2·start, … ≤ top`, always ending at `top`.
pub fn geometric_ladder(start: usize, top: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut n = start.max(1);
    while n < top {
        out.push(n);
        n *= 2;
    }
    out.push(top);
    out
}

// ---------------------------------------------------------------- parsing

/// Split on `sep` outside parentheses.
fn split_top(s: &str, sep: char) -> Vec<&str> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, ch) in s.char_indices() {
        match ch {
            '(' => depth += 1,
            ')' => depth -= 1,
            c if c == sep && depth == 0 => {
                out.push(&s[start..i]);
                start = i + ch.len_utf8();
            }
            _ => {}
        }
    }
    out.push(&s[start..]);
    out
}

/// `name(a,b)` → `(a, b)`.
fn product_args<'a>(s: &'a str, name: &str) -> Option<(&'a str, &'a str)> {
    let inner = s.strip_prefix(name)?.strip_prefix('(')?.strip_suffix(')')?;
    let parts = split_top(inner, ',');
    (parts.len() == 2).then(|| (parts[0].trim(), parts[1].trim()))
}

/// `kind:key=value,...` → kind plus key/value pairs.
fn kind_and_params(s: &str) -> Result<(&str, Vec<(&str, &str)>)> {
    let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
    let mut kvs = Vec::new();
    for part in split_top(rest, ',').into_iter().filter(|p| !p.trim().is_empty()) {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| Error::parse("spec", s, format!("expected key=value in {part:?}")))?;
        kvs.push((k.trim(), v.trim()));
    }
    Ok((kind.trim(), kvs))
}

fn parse_f64(what: &'static str, v: &str) -> Result<f64> {
    v.parse::<f64>().map_err(|_| Error::parse(what, v, "not a number"))
}

fn parse_vec(what: &'static str, v: &str) -> Result<Vec<f64>> {
    v.split('/').map(|t| parse_f64(what, t.trim())).collect()
}

fn parse_i64(what: &'static str, v: &str) -> Result<i64> {
    v.parse::<i64>().map_err(|_| Error::parse(what, v, "not an integer"))
}

fn reject_extra(what: &'static str, s: &str, kvs: &[(&str, &str)], allowed: &[&str]) -> Result<()> {
    match kvs.iter().find(|(k, _)| !allowed.contains(k)) {
        Some((k, _)) => Err(Error::parse(what, s, format!("unknown key {k}"))),
        None => Ok(()),
    }
}

fn lookup<'a>(kvs: &[(&'a str, &'a str)], key: &str) -> Option<&'a str> {
    kvs.iter().find(|(k, _)| *k == key).map(|(_, v)| *v)
}

impl FromStr for SystemModel {
    type Err = Error;

    /// `rotation:theta=0.414` (ℤᵈ actions: `theta=0.41/0.73`), `bernoulli`,
    /// `bernoulli:dim=2`, `skew:theta=0.414`, `product(<sys>,<sys>)`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some((a, b)) = product_args(s, "product") {
            return SystemModel::product(a.parse()?, b.parse()?);
        }
        let (kind, kvs) = kind_and_params(s)?;
        match kind {
            "rotation" => {
                reject_extra("system", s, &kvs, &["theta"])?;
                let t = lookup(&kvs, "theta").ok_or_else(|| Error::parse("system", s, "rotation needs theta"))?;
                SystemModel::rotation(&parse_vec("system", t)?)
            }
            "bernoulli" => {
                reject_extra("system", s, &kvs, &["dim"])?;
                let dim = lookup(&kvs, "dim")
                    .map(|d| parse_i64("system", d))
                    .transpose()?
                    .unwrap_or(1);
                SystemModel::bernoulli(u8::try_from(dim).map_err(|_| Error::parse("system", s, "bad dim"))?)
            }
            "skew" => {
                reject_extra("system", s, &kvs, &["theta"])?;
                let t = lookup(&kvs, "theta").ok_or_else(|| Error::parse("system", s, "skew needs theta"))?;
                SystemModel::skew(parse_f64("system", t)?)
            }
            _ => Err(Error::parse("system", s, "unknown system kind")),
        }
    }
}

impl fmt::Display for SystemModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SystemModel::Rotation { theta } => {
                let ts: Vec<String> = theta.iter().map(|t| format!("{}", t.to_f64())).collect();
                write!(f, "rotation:theta={}", ts.join("/"))
            }
            SystemModel::Bernoulli { dim: 1 } => write!(f, "bernoulli"),
            SystemModel::Bernoulli { dim } => write!(f, "bernoulli:dim={dim}"),
            SystemModel::Skew { theta } => write!(f, "skew:theta={}", theta.to_f64()),
            SystemModel::Product(a, b) => write!(f, "product({a},{b})"),
        }
    }
}

impl FromStr for Observable {
    type Err = Error;

    /// `cos`, `cos:k=2`, `sin`, `coord`, `const:0.5`, `fiber-cos`,
    /// `product(<obs>,<obs>)`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some((a, b)) = product_args(s, "product") {
            return Ok(Observable::Product(Box::new(a.parse()?), Box::new(b.parse()?)));
        }
        if let Some(v) = s.strip_prefix("const:") {
            let v = parse_f64("observable", v)?;
            if !(v.abs() <= 1.0) {
                return Err(Error::parse("observable", s, "constant not bounded by 1"));
            }
            return Ok(Observable::Const(v));
        }
        let (kind, kvs) = kind_and_params(s)?;
        reject_extra("observable", s, &kvs, &["k"])?;
        let k = lookup(&kvs, "k")
            .map(|k| parse_i64("observable", k))
            .transpose()?
            .unwrap_or(1);
        match kind {
            "cos" => Ok(Observable::Cos { k }),
            "sin" => Ok(Observable::Sin { k }),
            "fiber-cos" => Ok(Observable::FiberCos { k }),
            "coord" if kvs.is_empty() => Ok(Observable::Coord),
            _ => Err(Error::parse("observable", s, "unknown observable")),
        }
    }
}

impl fmt::Display for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Observable::Const(v) => write!(f, "const:{v}"),
            Observable::Cos { k: 1 } => write!(f, "cos"),
            Observable::Cos { k } => write!(f, "cos:k={k}"),
            Observable::Sin { k: 1 } => write!(f, "sin"),
            Observable::Sin { k } => write!(f, "sin:k={k}"),
            Observable::Coord => write!(f, "coord"),
            Observable::FiberCos { k: 1 } => write!(f, "fiber-cos"),
            Observable::FiberCos { k } => write!(f, "fiber-cos:k={k}"),
            Observable::Product(a, b) => write!(f, "product({a},{b})"),
            Observable::Sum(terms) => {
                let parts: Vec<String> = terms.iter().map(|(c, t)| format!("{c}*{t}")).collect();
                write!(f, "sum({})", parts.join(","))
            }
        }
    }
}

/// How to choose the base point of an orbit weight.
#[derive(Clone, Debug, PartialEq)]
pub enum PointSpec {
    /// Circle coordinates (`x=0.25`, skew: `x=0.1/0.7`), Bernoulli factors
    /// keyed by `seed`.
    Coords { coords: Vec<f64>, seed: u64 },
    /// Drawn from the invariant measure.
    Random { seed: u64 },
}

impl PointSpec {
    pub fn resolve(&self, sys: &SystemModel) -> Result<Point> {
        match self {
            PointSpec::Coords { coords, seed } => sys.point_from_coords(coords, *seed),
            PointSpec::Random { seed } => Ok(sys.sample_point(StreamKey::new(*seed))),
        }
    }
}

/// A weight recipe that can be materialized on any window.
#[derive(Clone, Debug, PartialEq)]
pub enum WeightSpec {
    Orbit {
        system: SystemModel,
        obs: Observable,
        point: PointSpec,
    },
    Zero,
    Const(f64),
    Cos {
        theta: f64,
    },
    Alternating,
    Bernoulli {
        seed: u64,
    },
    File(PathBuf),
}

impl WeightSpec {
    pub fn build(&self, window: FiniteRegion) -> Result<WeightFn> {
        match self {
            WeightSpec::Orbit { system, obs, point } => {
                let x = point.resolve(system)?;
                orbit_weight(system, obs, &x, window)
            }
            WeightSpec::Zero => Ok(zero_weight(window)),
            WeightSpec::Const(v) => constant_weight(window, *v),
            WeightSpec::Cos { theta } => Ok(cosine_weight(window, *theta)),
            WeightSpec::Alternating => Ok(alternating_weight(window)),
            WeightSpec::Bernoulli { seed } => Ok(bernoulli_weight(window, *seed)),
            WeightSpec::File(p) => {
                let w = WeightFn::load_csv(window.model(), p)?;
                if !window.is_subset(w.domain()) {
                    return Err(Error::OutOfWindow {
                        elem: window
                            .iter()
                            .find(|e| w.value(e).is_none())
                            .copied()
                            .unwrap_or(Elem::IDENTITY),
                        context: format!("{} does not cover the requested window", p.display()),
                    });
                }
                Ok(w)
            }
        }
    }

    /// Kronecker-orthogonal orbit weights (or zero) are the ones expected
    /// to satisfy the orthogonality condition.
    pub fn is_orbit(&self) -> bool {
        matches!(self, WeightSpec::Orbit { .. })
    }
}

impl FromStr for WeightSpec {
    type Err = Error;

    /// `zero`, `const:0.5`, `cos:theta=0.414`, `alternating`,
    /// `bernoulli:seed=7`, `file:path.csv`, and orbit weights
    /// `orbit:<system>[,obs=<obs>][,x=<coords>][,seed=<n>]`, e.g.
    /// `orbit:bernoulli:seed=7` or `orbit:rotation:theta=0.414,obs=cos,x=0`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(p) = s.strip_prefix("file:") {
            return Ok(WeightSpec::File(PathBuf::from(p)));
        }
        if let Some(v) = s.strip_prefix("const:") {
            let v = parse_f64("weight", v)?;
            if !(v.abs() <= 1.0) {
                return Err(Error::parse("weight", s, "constant not bounded by 1"));
            }
            return Ok(WeightSpec::Const(v));
        }
        if let Some(rest) = s.strip_prefix("orbit:") {
            return parse_orbit(s, rest);
        }
        let (kind, kvs) = kind_and_params(s)?;
        match kind {
            "zero" if kvs.is_empty() => Ok(WeightSpec::Zero),
            "alternating" if kvs.is_empty() => Ok(WeightSpec::Alternating),
            "cos" => {
                reject_extra("weight", s, &kvs, &["theta"])?;
                let t = lookup(&kvs, "theta").ok_or_else(|| Error::parse("weight", s, "cos needs theta"))?;
                Ok(WeightSpec::Cos {
                    theta: parse_f64("weight", t)?,
                })
            }
            "bernoulli" => {
                reject_extra("weight", s, &kvs, &["seed"])?;
                let seed = lookup(&kvs, "seed").ok_or_else(|| Error::parse("weight", s, "bernoulli needs seed"))?;
                Ok(WeightSpec::Bernoulli {
                    seed: seed.parse().map_err(|_| Error::parse("weight", s, "bad seed"))?,
                })
            }
            _ => Err(Error::parse("weight", s, "unknown weight kind")),
        }
    }
}

fn parse_orbit(whole: &str, rest: &str) -> Result<WeightSpec> {
    let mut sys_parts: Vec<&str> = Vec::new();
    let mut point_kvs: Vec<(&str, &str)> = Vec::new();
    for (i, tok) in split_top(rest, ',').into_iter().enumerate() {
        let tok = tok.trim();
        if i == 0 {
            // `bernoulli:seed=7`: the first system parameter may be a point key
            match tok.split_once(':') {
                Some((head, tail)) if is_point_key(tail) => {
                    sys_parts.push(head);
                    point_kvs.push(tail.split_once('=').expect("checked"));
                }
                _ => sys_parts.push(tok),
            }
        } else if is_point_key(tok) {
            point_kvs.push(tok.split_once('=').expect("checked"));
        } else {
            sys_parts.push(tok);
        }
    }
    let sys_str = sys_parts.join(",");
    let system: SystemModel = sys_str.parse()?;
    let get = |k: &str| point_kvs.iter().find(|(kk, _)| kk.trim() == k).map(|(_, v)| v.trim());
    let obs = match get("obs") {
        Some(o) => o.parse()?,
        None => default_observable(&system),
    };
    let seed = get("seed")
        .map(|v| v.parse::<u64>().map_err(|_| Error::parse("weight", whole, "bad seed")))
        .transpose()?;
    let point = match get("x") {
        Some(x) => PointSpec::Coords {
            coords: parse_vec("weight", x)?,
            seed: seed.unwrap_or(0),
        },
        None if system.coord_count() == 0 => PointSpec::Coords {
            coords: Vec::new(),
            seed: seed.unwrap_or(0),
        },
        None => PointSpec::Random {
            seed: seed.unwrap_or(0),
        },
    };
    if !system.supports(&obs) {
        return Err(Error::parse(
            "weight",
            whole,
            format!("observable {obs} is not defined on {system}"),
        ));
    }
    Ok(WeightSpec::Orbit { system, obs, point })
}

fn is_point_key(kv: &str) -> bool {
    kv.split_once('=')
        .is_some_and(|(k, _)| ["obs", "x", "seed"].contains(&k.trim()))
}

/// `ω₀` on Bernoulli, `cos` on circle systems, products factorwise.
pub fn default_observable(sys: &SystemModel) -> Observable {
    match sys {
        SystemModel::Bernoulli { .. } => Observable::Coord,
        SystemModel::Rotation { .. } | SystemModel::Skew { .. } => Observable::Cos { k: 1 },
        SystemModel::Product(a, b) => {
            Observable::Product(Box::new(default_observable(a)), Box::new(default_observable(b)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const Z: GroupModel = GroupModel::IntLine;

    fn z(lo: i64, hi: i64) -> FiniteRegion {
        FiniteRegion::interval(Z, lo, hi).unwrap()
    }

    fn golden() -> f64 {
        2f64.sqrt() - 1.0
    }

    #[test]
    fn rotation_orbit_is_closed_form() {
        let sys = SystemModel::rotation(&[golden()]).unwrap();
        let x = sys.point_from_coords(&[0.0], 0).unwrap();
        let w = orbit_weight(&sys, &Observable::Cos { k: 1 }, &x, z(0, 1000)).unwrap();
        for n in [0i64, 1, 17, 999] {
            let want = (std::f64::consts::TAU * n as f64 * golden()).cos();
            assert!((w.at(&Elem::int(n)).unwrap() - want).abs() < 1e-9);
        }
        assert_eq!(w.provenance(), Provenance::Orbit);
    }

    #[test]
    fn identity_gives_base_value() {
        let sys = SystemModel::skew(0.3).unwrap();
        let x = sys.point_from_coords(&[0.1, 0.2], 0).unwrap();
        let v = sys.eval(&Observable::FiberCos { k: 1 }, &x, &Elem::IDENTITY).unwrap();
        assert!((v - (std::f64::consts::TAU * 0.2).cos()).abs() < 1e-12);
    }

    #[test]
    fn skew_closed_form_matches_iteration() {
        let sys = SystemModel::skew(golden()).unwrap();
        let x = sys.point_from_coords(&[0.37, 0.81], 0).unwrap();
        let (mut a, mut b) = match &x {
            Point::Torus2(a, b) => (*a, *b),
            _ => unreachable!(),
        };
        let theta = Phase::from_f64(golden());
        for n in 1..=100_000i64 {
            b = b.add(a);
            a = a.add(theta);
            if n % 997 == 0 {
                assert_eq!(sys.act(&x, &Elem::int(n)).unwrap(), Point::Torus2(a, b));
            }
        }
    }

    #[test]
    fn bernoulli_orbit_is_coordinate_path() {
        let sys = SystemModel::bernoulli(1).unwrap();
        let x = sys.point_from_coords(&[], 7).unwrap();
        let w = orbit_weight(&sys, &Observable::Coord, &x, z(0, 100)).unwrap();
        let Point::Shift { key, .. } = &x else { unreachable!() };
        for n in 0..100 {
            assert_eq!(w.at(&Elem::int(n)).unwrap(), key.sign_at(&Elem::int(n)));
        }
        let shifted = sys.act(&x, &Elem::int(5)).unwrap();
        assert_eq!(
            sys.eval(&Observable::Coord, &shifted, &Elem::int(3)).unwrap(),
            w.at(&Elem::int(8)).unwrap()
        );
    }

    #[test]
    fn weighted_average_trivial_cases() {
        let sys = SystemModel::rotation(&[golden()]).unwrap();
        let y = sys.point_from_coords(&[0.3], 0).unwrap();
        let one = constant_weight(z(0, 100), 1.0).unwrap();
        let v = weighted_average(&one, &sys, &Observable::Const(1.0), &y, &z(0, 100)).unwrap();
        assert_eq!(v, 1.0);
        let trivial = SystemModel::rotation(&[0.0]).unwrap();
        let alt = alternating_weight(z(0, 100));
        let v = weighted_average(&alt, &trivial, &Observable::Cos { k: 1 }, &y, &z(0, 100)).unwrap();
        assert!(v.abs() < 1e-12);
        assert!(weighted_average(&one, &sys, &Observable::Coord, &y, &z(0, 100)).is_err());
        assert!(weighted_average(&one, &sys, &Observable::Cos { k: 1 }, &y, &z(0, 101)).is_err());
    }

    #[test]
    fn weighted_average_is_linear() {
        let sys = SystemModel::rotation(&[golden()]).unwrap();
        let y = sys.point_from_coords(&[0.3], 0).unwrap();
        let w = z(0, 500);
        let c1 = bernoulli_weight(w.clone(), 1);
        let c2 = cosine_weight(w.clone(), 0.2);
        let (a, b) = (0.3, -0.6);
        let comb = WeightFn::from_fn(w.clone(), Provenance::Synthetic, |g| {
            a * c1.at(g).unwrap() + b * c2.at(g).unwrap()
        })
        .unwrap();
        let f = Observable::Cos { k: 1 };
        let lhs = weighted_average(&comb, &sys, &f, &y, &w).unwrap();
        let rhs =
            a * weighted_average(&c1, &sys, &f, &y, &w).unwrap() + b * weighted_average(&c2, &sys, &f, &y, &w).unwrap();
        assert!((lhs - rhs).abs() < 1e-12);
        let g2 = Observable::Sum(vec![(0.5, Observable::Cos { k: 1 }), (0.5, Observable::Sin { k: 2 })]);
        let lhs = weighted_average(&c1, &sys, &g2, &y, &w).unwrap();
        let rhs = 0.5 * weighted_average(&c1, &sys, &Observable::Cos { k: 1 }, &y, &w).unwrap()
            + 0.5 * weighted_average(&c1, &sys, &Observable::Sin { k: 2 }, &y, &w).unwrap();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn kronecker_catalog() {
        let b = SystemModel::bernoulli(1).unwrap();
        let (kr, perp) = kronecker_project(&b, &Observable::Coord).unwrap();
        assert_eq!((kr, perp), (Observable::Const(0.0), Observable::Coord));
        let r = SystemModel::rotation(&[golden()]).unwrap();
        let (kr, perp) = kronecker_project(&r, &Observable::Cos { k: 3 }).unwrap();
        assert_eq!((kr, perp), (Observable::Cos { k: 3 }, Observable::Const(0.0)));
        let p = SystemModel::product(r.clone(), b.clone()).unwrap();
        let f = Observable::Product(Box::new(Observable::Cos { k: 1 }), Box::new(Observable::Coord));
        let (kr, perp) = kronecker_project(&p, &f).unwrap();
        assert_eq!(kr, Observable::Const(0.0));
        assert_eq!(perp, f);
        let rational = SystemModel::rotation(&[0.25]).unwrap();
        assert!(matches!(
            kronecker_project(&rational, &Observable::Cos { k: 1 }),
            Err(Error::NoAnalyticDecomposition(_))
        ));
        let s = SystemModel::skew(golden()).unwrap();
        let ps = SystemModel::product(s, r).unwrap();
        let f = Observable::Product(
            Box::new(Observable::FiberCos { k: 1 }),
            Box::new(Observable::Cos { k: 1 }),
        );
        assert!(matches!(
            kronecker_project(&ps, &f),
            Err(Error::NoAnalyticDecomposition(_))
        ));
    }

    #[test]
    fn character_average_examples() {
        let one = constant_weight(z(0, 1000), 1.0).unwrap();
        let chi0 = CharacterId::new(vec![0.0]).unwrap();
        assert_eq!(
            character_average(&one, &chi0, &z(0, 1000)).unwrap(),
            Complex64::new(1.0, 0.0)
        );
        let n = 100_000;
        let c = cosine_weight(z(0, n), golden());
        let chi = CharacterId::new(vec![golden()]).unwrap();
        let v = character_average(&c, &chi, &z(0, n)).unwrap();
        assert!((v.norm() - 0.5).abs() < 1e-3, "{v}");
        assert!(CharacterId::new(vec![1.0]).is_err());
    }

    #[test]
    fn genericity_gap_bounds() {
        let theta = golden();
        let sys = SystemModel::rotation(&[theta]).unwrap();
        let x = sys.point_from_coords(&[0.0], 0).unwrap();
        let seq = FolnerSeq::new(Z, crate::folner::SeqKind::Interval, 10_000).unwrap();
        let gap = genericity_gap(&sys, &Observable::Cos { k: 1 }, &x, &seq, (10_000, 10_000)).unwrap();
        let bound = 2.0 / (10_000.0 * (Complex64::new(1.0, 0.0) - Phase::from_f64(theta).expi()).norm());
        assert!(gap <= bound && gap <= 1e-2, "{gap} vs {bound}");
        let gap = genericity_gap(&sys, &Observable::Const(0.4), &x, &seq, (1, 100)).unwrap();
        assert!(gap < 1e-15);
        let b = SystemModel::bernoulli(1).unwrap();
        let w = b.point_from_coords(&[], 3).unwrap();
        assert!(genericity_gap(&b, &Observable::Coord, &w, &seq, (10_000, 10_000)).unwrap() <= 0.05);
    }

    #[test]
    fn zd_rotation_acts_additively() {
        let sys = SystemModel::rotation(&[0.1, golden()]).unwrap();
        assert_eq!(sys.group(), GroupModel::IntGrid { dim: 2 });
        let x = sys.point_from_coords(&[0.2], 0).unwrap();
        let g = Elem::pair(3, -2);
        let want = (std::f64::consts::TAU * (0.2 + 0.3 - 2.0 * golden())).cos();
        assert!((sys.eval(&Observable::Cos { k: 1 }, &x, &g).unwrap() - want).abs() < 1e-9);
    }

    #[test]
    fn spec_strings_round_trip() {
        for s in [
            "rotation:theta=0.25",
            "bernoulli",
            "bernoulli:dim=2",
            "skew:theta=0.5",
            "product(rotation:theta=0.25,bernoulli)",
        ] {
            let sys: SystemModel = s.parse().unwrap();
            assert_eq!(sys.to_string(), s);
        }
        for s in [
            "cos",
            "cos:k=2",
            "sin",
            "coord",
            "const:1",
            "fiber-cos",
            "product(cos,coord)",
        ] {
            let o: Observable = s.parse().unwrap();
            assert_eq!(o.to_string(), s);
        }
        assert!("const:2".parse::<Observable>().is_err());
        assert!("torus".parse::<SystemModel>().is_err());
    }

    #[test]
    fn weight_specs_parse() {
        let w: WeightSpec = "orbit:bernoulli:seed=7".parse().unwrap();
        assert_eq!(
            w,
            WeightSpec::Orbit {
                system: SystemModel::bernoulli(1).unwrap(),
                obs: Observable::Coord,
                point: PointSpec::Coords {
                    coords: vec![],
                    seed: 7
                }
            }
        );
        let w: WeightSpec = "orbit:rotation:theta=0.41421356,obs=cos,x=0".parse().unwrap();
        let WeightSpec::Orbit { system, obs, point } = &w else {
            panic!()
        };
        assert_eq!(system, &SystemModel::rotation(&[0.41421356]).unwrap());
        assert_eq!(obs, &Observable::Cos { k: 1 });
        assert_eq!(
            point,
            &PointSpec::Coords {
                coords: vec![0.0],
                seed: 0
            }
        );
        let w: WeightSpec = "orbit:product(rotation:theta=0.3,bernoulli),obs=product(cos,coord),x=0.5,seed=2"
            .parse()
            .unwrap();
        assert!(matches!(
            w,
            WeightSpec::Orbit {
                system: SystemModel::Product(..),
                ..
            }
        ));
        assert_eq!("zero".parse::<WeightSpec>().unwrap(), WeightSpec::Zero);
        assert_eq!("const:0.5".parse::<WeightSpec>().unwrap(), WeightSpec::Const(0.5));
        assert_eq!(
            "cos:theta=0.2".parse::<WeightSpec>().unwrap(),
            WeightSpec::Cos { theta: 0.2 }
        );
        assert_eq!("alternating".parse::<WeightSpec>().unwrap(), WeightSpec::Alternating);
        assert!("orbit:rotation:theta=0.3,obs=coord".parse::<WeightSpec>().is_err());
        assert!("const:3".parse::<WeightSpec>().is_err());
    }
}
