//! Discrete stand-ins for lcsc amenable groups, with exact set algebra.
//!
//! Every model stores elements as integer coordinate triples, so membership
//! and products are exact. `LatticeR` represents the real line by `εℤ`: an
//! element with coordinate `k` is the real number `kε` and carries Haar mass
//! `ε`. All models are unimodular, so left and right Haar measure coincide.

use std::fmt;
use std::str::FromStr;

use rustc_hash::FxHashSet;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest number of coordinates any model uses.
pub const MAX_COORDS: usize = 3;

/// Upper bound on materialized set sizes.
pub const SCALE_CAP: usize = 10_000_000;
const RUN_PAIR_CAP: usize = 1 << 22;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Elem([i64; MAX_COORDS]);

impl Elem {
    pub const IDENTITY: Elem = Elem([0; MAX_COORDS]);

    pub const fn int(n: i64) -> Self {
        Elem([n, 0, 0])
    }

    pub const fn pair(a: i64, b: i64) -> Self {
        Elem([a, b, 0])
    }

    pub const fn triple(a: i64, b: i64, c: i64) -> Self {
        Elem([a, b, c])
    }

    pub fn from_coords(c: &[i64]) -> Option<Self> {
        if c.len() > MAX_COORDS {
            return None;
        }
        let mut out = [0; MAX_COORDS];
        out[..c.len()].copy_from_slice(c);
        Some(Elem(out))
    }

    #[inline]
    pub fn coords(&self) -> [i64; MAX_COORDS] {
        self.0
    }

    /// First coordinate; the integer itself for one-dimensional models.
    #[inline]
    pub fn x(&self) -> i64 {
        self.0[0]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum GroupModel {
    /// ℤ
    IntLine,
    /// ℤᵈ, 1 ≤ d ≤ 3
    IntGrid { dim: u8 },
    /// Integer Heisenberg group, (a,b,c)·(a′,b′,c′) = (a+a′, b+b′, c+c′+ab′)
    Heisenberg,
    /// The lattice εℤ ⊂ ℝ with point mass ε
    LatticeR { spacing: f64 },
}

impl GroupModel {
    pub fn int_grid(dim: u8) -> Result<Self> {
        match dim {
            1 => Ok(GroupModel::IntLine),
            2..=3 => Ok(GroupModel::IntGrid { dim }),
            _ => Err(Error::InvalidParam(format!(
                "grid dimension must be in 1..={MAX_COORDS}, got {dim}"
            ))),
        }
    }

    pub fn lattice_r(spacing: f64) -> Result<Self> {
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(Error::InvalidParam(format!(
                "lattice spacing must be positive, got {spacing}"
            )));
        }
        Ok(GroupModel::LatticeR { spacing })
    }

    pub fn dims(&self) -> usize {
        match self {
            GroupModel::IntLine | GroupModel::LatticeR { .. } => 1,
            GroupModel::IntGrid { dim } => *dim as usize,
            GroupModel::Heisenberg => 3,
        }
    }

    pub fn is_abelian(&self) -> bool {
        !matches!(self, GroupModel::Heisenberg)
    }

    pub fn haar_weight(&self) -> f64 {
        match self {
            GroupModel::LatticeR { spacing } => *spacing,
            _ => 1.0,
        }
    }

    pub fn identity(&self) -> Elem {
        Elem::IDENTITY
    }

    /// True if `e` is a valid element of this model (unused coordinates zero).
    pub fn owns(&self, e: &Elem) -> bool {
        e.0[self.dims()..].iter().all(|&c| c == 0)
    }

    #[inline]
    pub fn multiply(&self, a: &Elem, b: &Elem) -> Elem {
        let (x, y) = (a.0, b.0);
        match self {
            GroupModel::Heisenberg => Elem([x[0] + y[0], x[1] + y[1], x[2] + y[2] + x[0] * y[1]]),
            _ => Elem([x[0] + y[0], x[1] + y[1], x[2] + y[2]]),
        }
    }

    #[inline]
    pub fn invert(&self, a: &Elem) -> Elem {
        let x = a.0;
        match self {
            GroupModel::Heisenberg => Elem([-x[0], -x[1], -x[2] + x[0] * x[1]]),
            _ => Elem([-x[0], -x[1], -x[2]]),
        }
    }

    /// `multiply` that rejects elements foreign to the model.
    pub fn try_multiply(&self, a: &Elem, b: &Elem) -> Result<Elem> {
        for e in [a, b] {
            if !self.owns(e) {
                return Err(Error::ModelMismatch(format!("{e:?} is not an element of {self}")));
            }
        }
        Ok(self.multiply(a, b))
    }

    /// Lattice point for the real number `x`; `x` must be a multiple of ε
    /// up to rounding noise.
    pub fn lattice_point(&self, x: f64) -> Result<Elem> {
        let GroupModel::LatticeR { spacing } = self else {
            return Err(Error::ModelMismatch(format!("{self} has no real coordinates")));
        };
        let k = (x / spacing).round();
        if ((x / spacing) - k).abs() > 1e-6 {
            return Err(Error::InvalidParam(format!("{x} is not on the lattice {spacing}ℤ")));
        }
        Ok(Elem::int(k as i64))
    }

    /// Real coordinate of a lattice point (the integer itself otherwise).
    pub fn real_coord(&self, e: &Elem) -> f64 {
        e.0[0] as f64 * self.haar_weight()
    }
}

impl fmt::Display for GroupModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroupModel::IntLine => write!(f, "Z"),
            GroupModel::IntGrid { dim } => write!(f, "Z^{dim}"),
            GroupModel::Heisenberg => write!(f, "heis"),
            GroupModel::LatticeR { spacing } => write!(f, "latticeR:{spacing}"),
        }
    }
}

impl FromStr for GroupModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        match t {
            "Z" => return Ok(GroupModel::IntLine),
            "heis" => return Ok(GroupModel::Heisenberg),
            "latticeR" => return GroupModel::lattice_r(0.01),
            _ => {}
        }
        if let Some(d) = t.strip_prefix("Z^") {
            let dim: u8 = d.parse().map_err(|_| Error::parse("group model", s, "bad dimension"))?;
            return GroupModel::int_grid(dim);
        }
        if let Some(eps) = t.strip_prefix("latticeR:") {
            let spacing: f64 = eps.parse().map_err(|_| Error::parse("group model", s, "bad spacing"))?;
            return GroupModel::lattice_r(spacing);
        }
        Err(Error::parse(
            "group model",
            s,
            "expected Z, Z^d, heis or latticeR:<eps>",
        ))
    }
}

impl TryFrom<String> for GroupModel {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<GroupModel> for String {
    fn from(m: GroupModel) -> String {
        m.to_string()
    }
}

/// A finite set of group elements; the stand-in for a compact set.
///
/// Elements are kept sorted and unique, so equality is set equality and
/// serialization is canonical.
#[derive(Clone, Debug, PartialEq)]
pub struct FiniteRegion {
    model: GroupModel,
    elems: Vec<Elem>,
}

impl FiniteRegion {
    pub fn new(model: GroupModel, elems: impl IntoIterator<Item = Elem>) -> Result<Self> {
        let mut elems: Vec<Elem> = elems.into_iter().collect();
        if let Some(bad) = elems.iter().find(|e| !model.owns(e)) {
            return Err(Error::ModelMismatch(format!("{bad:?} is not an element of {model}")));
        }
        elems.sort_unstable();
        elems.dedup();
        Ok(FiniteRegion { model, elems })
    }

    pub(crate) fn from_sorted(model: GroupModel, elems: Vec<Elem>) -> Self {
        debug_assert!(elems.windows(2).all(|w| w[0] < w[1]));
        FiniteRegion { model, elems }
    }

    pub(crate) fn from_unsorted(model: GroupModel, mut elems: Vec<Elem>) -> Self {
        elems.sort_unstable();
        elems.dedup();
        FiniteRegion { model, elems }
    }

    pub fn empty(model: GroupModel) -> Self {
        FiniteRegion {
            model,
            elems: Vec::new(),
        }
    }

    pub fn singleton(model: GroupModel, e: Elem) -> Result<Self> {
        Self::new(model, [e])
    }

    /// Lattice-index interval `[lo, hi)` of a one-dimensional model.
    pub fn interval(model: GroupModel, lo: i64, hi: i64) -> Result<Self> {
        if model.dims() != 1 {
            return Err(Error::ModelMismatch(format!(
                "interval needs a one-dimensional model, got {model}"
            )));
        }
        Ok(Self::from_sorted(model, (lo..hi.max(lo)).map(Elem::int).collect()))
    }

    /// Coordinate box `∏ [lo_i, hi_i)` over the model's coordinates.
    pub fn coord_box(model: GroupModel, lo: &[i64], hi: &[i64]) -> Result<Self> {
        let d = model.dims();
        if lo.len() != d || hi.len() != d {
            return Err(Error::InvalidParam(format!("box corners need {d} coordinates")));
        }
        let size: i128 = lo.iter().zip(hi).map(|(l, h)| ((h - l).max(0)) as i128).product();
        if size > SCALE_CAP as i128 {
            return Err(Error::ScaleCap {
                what: "coordinate box",
                cap: SCALE_CAP,
            });
        }
        let mut out = Vec::with_capacity(size as usize);
        let mut cur = [0i64; MAX_COORDS];
        fn rec(k: usize, d: usize, lo: &[i64], hi: &[i64], cur: &mut [i64; MAX_COORDS], out: &mut Vec<Elem>) {
            if k == d {
                out.push(Elem(*cur));
                return;
            }
            for v in lo[k]..hi[k] {
                cur[k] = v;
                rec(k + 1, d, lo, hi, cur, out);
            }
        }
        rec(0, d, lo, hi, &mut cur, &mut out);
        Ok(Self::from_sorted(model, out))
    }

    pub fn model(&self) -> GroupModel {
        self.model
    }

    pub fn elements(&self) -> &[Elem] {
        &self.elems
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Elem> {
        self.elems.iter()
    }

    pub fn len(&self) -> usize {
        self.elems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elems.is_empty()
    }

    /// Haar measure: element count times the per-element mass.
    pub fn measure(&self) -> f64 {
        self.elems.len() as f64 * self.model.haar_weight()
    }

    pub fn contains(&self, e: &Elem) -> bool {
        self.elems.binary_search(e).is_ok()
    }

    /// For a one-dimensional model, the index bounds `[lo, hi]` if the region
    /// is a contiguous run of lattice points.
    pub fn as_index_range(&self) -> Option<(i64, i64)> {
        if self.model.dims() != 1 || self.elems.is_empty() {
            return None;
        }
        let lo = self.elems[0].x();
        let hi = self.elems[self.elems.len() - 1].x();
        ((hi - lo + 1) as usize == self.elems.len()).then_some((lo, hi))
    }

    pub fn hash_set(&self) -> FxHashSet<Elem> {
        self.elems.iter().copied().collect()
    }

    pub fn is_subset(&self, other: &FiniteRegion) -> bool {
        self.elems.iter().all(|e| other.contains(e))
    }

    fn check_same(&self, other: &FiniteRegion) -> Result<()> {
        if self.model != other.model {
            return Err(Error::ModelMismatch(format!("{} vs {}", self.model, other.model)));
        }
        Ok(())
    }

    fn merge(&self, other: &FiniteRegion, keep_a: bool, keep_b: bool, keep_both: bool) -> Result<Self> {
        self.check_same(other)?;
        let (a, b) = (&self.elems, &other.elems);
        let mut out = Vec::with_capacity(a.len().max(b.len()));
        let (mut i, mut j) = (0, 0);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => {
                    if keep_a {
                        out.push(a[i]);
                    }
                    i += 1;
                }
                std::cmp::Ordering::Greater => {
                    if keep_b {
                        out.push(b[j]);
                    }
                    j += 1;
                }
                std::cmp::Ordering::Equal => {
                    if keep_both {
                        out.push(a[i]);
                    }
                    i += 1;
                    j += 1;
                }
            }
        }
        if keep_a {
            out.extend_from_slice(&a[i..]);
        }
        if keep_b {
            out.extend_from_slice(&b[j..]);
        }
        Ok(Self::from_sorted(self.model, out))
    }

    pub fn union(&self, other: &FiniteRegion) -> Result<Self> {
        self.merge(other, true, true, true)
    }

    pub fn intersection(&self, other: &FiniteRegion) -> Result<Self> {
        self.merge(other, false, false, true)
    }

    pub fn difference(&self, other: &FiniteRegion) -> Result<Self> {
        self.merge(other, true, false, false)
    }

    pub fn symmetric_difference(&self, other: &FiniteRegion) -> Result<Self> {
        self.merge(other, true, true, false)
    }

    /// `A⁻¹ = {a⁻¹ : a ∈ A}`
    pub fn inverse(&self) -> Self {
        let v = self.elems.iter().map(|e| self.model.invert(e)).collect();
        Self::from_unsorted(self.model, v)
    }

    /// `gA`
    pub fn translate_left(&self, g: &Elem) -> Self {
        let v = self.elems.iter().map(|e| self.model.multiply(g, e)).collect();
        Self::from_unsorted(self.model, v)
    }

    /// `Ag`
    pub fn translate_right(&self, g: &Elem) -> Self {
        let v = self.elems.iter().map(|e| self.model.multiply(e, g)).collect();
        Self::from_unsorted(self.model, v)
    }

    /// `AB = {ab : a ∈ A, b ∈ B}`, duplicates merged.
    pub fn product(&self, other: &FiniteRegion) -> Result<Self> {
        self.check_same(other)?;
        if self.is_empty() || other.is_empty() {
            return Ok(Self::empty(self.model));
        }
        // One-dimensional contiguous runs: the product is again a run.
        if let (Some((a0, a1)), Some((b0, b1))) = (self.as_index_range(), other.as_index_range()) {
            let size = (a1 + b1) - (a0 + b0) + 1;
            if size as usize > SCALE_CAP {
                return Err(Error::ScaleCap {
                    what: "product set",
                    cap: SCALE_CAP,
                });
            }
            return Self::interval(self.model, a0 + b0, a1 + b1 + 1);
        }
        if self.model.dims() == 1 {
            let (ra, rb) = (self.runs(), other.runs());
            if ra.len().saturating_mul(rb.len()) <= RUN_PAIR_CAP {
                return self.run_sum(&ra, &rb);
            }
        }
        let bound = self.len().saturating_mul(other.len());
        let mut set: FxHashSet<Elem> = FxHashSet::default();
        set.reserve(bound.min(1 << 20));
        let m = self.model;
        for a in &self.elems {
            for b in &other.elems {
                set.insert(m.multiply(a, b));
            }
            if set.len() > SCALE_CAP {
                return Err(Error::ScaleCap {
                    what: "product set",
                    cap: SCALE_CAP,
                });
            }
        }
        Ok(Self::from_unsorted(m, set.into_iter().collect()))
    }

    /// Maximal runs of consecutive indices of a one-dimensional region.
    fn runs(&self) -> Vec<(i64, i64)> {
        let mut out: Vec<(i64, i64)> = Vec::new();
        for x in self.elems.iter().map(Elem::x) {
            match out.last_mut() {
                Some((_, hi)) if *hi + 1 == x => *hi = x,
                _ => out.push((x, x)),
            }
        }
        out
    }

    /// Sumset of two run lists, merged into a region.
    fn run_sum(&self, ra: &[(i64, i64)], rb: &[(i64, i64)]) -> Result<Self> {
        let mut sums: Vec<(i64, i64)> = ra
            .iter()
            .flat_map(|a| rb.iter().map(move |b| (a.0 + b.0, a.1 + b.1)))
            .collect();
        sums.sort_unstable();
        let mut merged: Vec<(i64, i64)> = Vec::new();
        let mut total = 0usize;
        for (lo, hi) in sums {
            match merged.last_mut() {
                Some((_, h)) if lo <= *h + 1 => *h = (*h).max(hi),
                _ => merged.push((lo, hi)),
            }
        }
        for (lo, hi) in &merged {
            total += (hi - lo + 1) as usize;
            if total > SCALE_CAP {
                return Err(Error::ScaleCap {
                    what: "product set",
                    cap: SCALE_CAP,
                });
            }
        }
        let elems = merged
            .into_iter()
            .flat_map(|(lo, hi)| (lo..=hi).map(Elem::int))
            .collect();
        Ok(Self {
            model: self.model,
            elems,
        })
    }
}

impl<'a> IntoIterator for &'a FiniteRegion {
    type Item = &'a Elem;
    type IntoIter = std::slice::Iter<'a, Elem>;
    fn into_iter(self) -> Self::IntoIter {
        self.elems.iter()
    }
}

#[derive(Serialize, Deserialize)]
struct RegionRepr {
    model: GroupModel,
    elements: Vec<Vec<i64>>,
}

impl Serialize for FiniteRegion {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let d = self.model.dims();
        RegionRepr {
            model: self.model,
            elements: self.elems.iter().map(|e| e.0[..d].to_vec()).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for FiniteRegion {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = RegionRepr::deserialize(d)?;
        let dims = r.model.dims();
        let elems = r
            .elements
            .iter()
            .map(|c| {
                if c.len() != dims {
                    Err(serde::de::Error::custom(format!(
                        "expected {dims} coordinates, got {}",
                        c.len()
                    )))
                } else {
                    Ok(Elem::from_coords(c).expect("dims ≤ MAX_COORDS"))
                }
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        FiniteRegion::new(r.model, elems).map_err(serde::de::Error::custom)
    }
}

/// Parse an element list such as `"0,1"` (one-dimensional), `"-1..0"`
/// (every lattice point of a closed real/integer range) or `"0,0;1,0"`
/// (`;` between elements, `,` between coordinates).
pub fn parse_region(model: GroupModel, s: &str) -> Result<FiniteRegion> {
    let s = s.trim();
    if let Some((lo, hi)) = s.split_once("..") {
        if model.dims() != 1 {
            return Err(Error::parse("region", s, "ranges need a one-dimensional model"));
        }
        let lo: f64 = lo
            .trim()
            .parse()
            .map_err(|_| Error::parse("region", s, "bad range start"))?;
        let hi: f64 = hi
            .trim()
            .parse()
            .map_err(|_| Error::parse("region", s, "bad range end"))?;
        let (a, b) = match model {
            GroupModel::LatticeR { .. } => (model.lattice_point(lo)?.x(), model.lattice_point(hi)?.x()),
            _ => (lo as i64, hi as i64),
        };
        return FiniteRegion::interval(model, a, b + 1);
    }
    let one_dim = model.dims() == 1;
    let items: Vec<&str> = if one_dim {
        s.split([',', ';']).collect()
    } else {
        s.split(';').collect()
    };
    let mut elems = Vec::new();
    for item in items.iter().map(|t| t.trim()).filter(|t| !t.is_empty()) {
        let e = if let GroupModel::LatticeR { .. } = model {
            let x: f64 = item
                .parse()
                .map_err(|_| Error::parse("region", s, format!("bad number {item:?}")))?;
            model.lattice_point(x)?
        } else {
            let coords = item
                .split(',')
                .map(|c| c.trim().parse::<i64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| Error::parse("region", s, format!("bad element {item:?}")))?;
            if coords.len() != model.dims() {
                return Err(Error::parse(
                    "region",
                    s,
                    format!("element {item:?} needs {} coordinates", model.dims()),
                ));
            }
            Elem::from_coords(&coords).expect("dims ≤ MAX_COORDS")
        };
        elems.push(e);
    }
    FiniteRegion::new(model, elems)
}
