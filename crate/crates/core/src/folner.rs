//! Følner sequences and their diagnostics: K-boundaries, weak and strong
//! defects, temperedness, and finite-window densities.

use std::fmt;
use std::str::FromStr;

use rustc_hash::FxHashSet;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::group::{Elem, FiniteRegion, GroupModel, SCALE_CAP};
use crate::par;

/// Generator of a Følner family.
#[derive(Clone, Debug, PartialEq)]
pub enum SeqKind {
    /// `[0, N)` in ℤ, `[0, N) ∩ εℤ` in the real lattice.
    Interval,
    /// `[0, 2^N)` in a one-dimensional model (lattice units for εℤ).
    Pow2,
    /// `[0, N)^d` in ℤᵈ.
    Cube,
    /// `[0,N) × [0,N) × [0,N²)` in the Heisenberg group.
    HeisenbergBox,
    /// `[0, N] ∩ εℤ` with one lattice point removed per unit length; weak
    /// Følner but not strong.
    SwissCheese,
    /// `[0, 2^N)` for odd N, `[-2^N, 0)` for even N.
    Alternating,
    /// `[N², N² + N)`; Følner but not tempered.
    Drifting,
    User(Vec<FiniteRegion>),
}

impl SeqKind {
    pub fn tag(&self) -> &'static str {
        match self {
            SeqKind::Interval => "interval",
            SeqKind::Pow2 => "pow2",
            SeqKind::Cube => "cube",
            SeqKind::HeisenbergBox => "heisbox",
            SeqKind::SwissCheese => "swiss",
            SeqKind::Alternating => "alternating",
            SeqKind::Drifting => "drifting",
            SeqKind::User(_) => "user",
        }
    }
}

/// An indexed family `N ↦ F_N`, `N = 1..=len`. Generated families are
/// materialized on demand.
#[derive(Clone, Debug)]
pub struct FolnerSeq {
    model: GroupModel,
    kind: SeqKind,
    len: usize,
}

impl FolnerSeq {
    pub fn new(model: GroupModel, kind: SeqKind, len: usize) -> Result<Self> {
        use GroupModel as G;
        let ok = match (&kind, model) {
            (SeqKind::Interval | SeqKind::Pow2, G::IntLine | G::LatticeR { .. }) => true,
            (SeqKind::Cube, G::IntLine | G::IntGrid { .. }) => true,
            (SeqKind::HeisenbergBox, G::Heisenberg) => true,
            (SeqKind::SwissCheese, G::LatticeR { spacing }) => spacing < 0.5,
            (SeqKind::Alternating | SeqKind::Drifting, G::IntLine) => true,
            (SeqKind::User(sets), m) => sets.iter().all(|s| s.model() == m),
            _ => false,
        };
        if !ok {
            return Err(Error::InvalidParam(format!(
                "sequence {} is not available on {model}",
                kind.tag()
            )));
        }
        let len = match &kind {
            SeqKind::User(sets) => {
                if sets.len() != len {
                    return Err(Error::InvalidParam("user sequence length mismatch".into()));
                }
                len
            }
            _ => len,
        };
        if len == 0 {
            return Err(Error::InvalidParam("a Følner sequence needs at least one set".into()));
        }
        if let SeqKind::User(sets) = &kind {
            if sets.iter().any(|s| s.is_empty()) {
                return Err(Error::InvalidParam("Følner sets must be nonnull".into()));
            }
        }
        if matches!(kind, SeqKind::Pow2 | SeqKind::Alternating) && len > 23 {
            return Err(Error::ScaleCap {
                what: "dyadic Følner set",
                cap: SCALE_CAP,
            });
        }
        Ok(FolnerSeq { model, kind, len })
    }

    pub fn user(model: GroupModel, sets: Vec<FiniteRegion>) -> Result<Self> {
        let len = sets.len();
        Self::new(model, SeqKind::User(sets), len)
    }

    pub fn model(&self) -> GroupModel {
        self.model
    }

    pub fn kind(&self) -> &SeqKind {
        &self.kind
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `F_n` for `1 ≤ n ≤ len`.
    pub fn set(&self, n: usize) -> Result<FiniteRegion> {
        if n == 0 || n > self.len {
            return Err(Error::InvalidParam(format!("index {n} outside 1..={}", self.len)));
        }
        let m = self.model;
        let ni = n as i64;
        match &self.kind {
            SeqKind::Interval => match m {
                GroupModel::LatticeR { spacing } => FiniteRegion::interval(m, 0, (n as f64 / spacing).round() as i64),
                _ => FiniteRegion::interval(m, 0, ni),
            },
            SeqKind::Pow2 => FiniteRegion::interval(m, 0, 1 << n),
            SeqKind::Cube => {
                let d = m.dims();
                FiniteRegion::coord_box(m, &vec![0; d], &vec![ni; d])
            }
            SeqKind::HeisenbergBox => FiniteRegion::coord_box(m, &[0, 0, 0], &[ni, ni, ni * ni]),
            SeqKind::SwissCheese => Ok(swiss_cheese(m, n)),
            SeqKind::Alternating => {
                if n % 2 == 1 {
                    FiniteRegion::interval(m, 0, 1 << n)
                } else {
                    FiniteRegion::interval(m, -(1 << n), 0)
                }
            }
            SeqKind::Drifting => FiniteRegion::interval(m, ni * ni, ni * ni + ni),
            SeqKind::User(sets) => Ok(sets[n - 1].clone()),
        }
    }

    /// `[lo, hi)` for families of one-dimensional intervals anchored at 0.
    fn interval_bounds(&self, n: usize) -> Option<(i64, i64)> {
        match (&self.kind, self.model) {
            (SeqKind::Interval, GroupModel::LatticeR { spacing }) => Some((0, (n as f64 / spacing).round() as i64)),
            (SeqKind::Interval, GroupModel::IntLine) => Some((0, n as i64)),
            (SeqKind::Pow2, m) if m.dims() == 1 => Some((0, 1 << n)),
            _ => None,
        }
    }

    /// True when `F_1 ⊆ F_2 ⊆ ...`.
    pub fn is_nested(&self) -> bool {
        match &self.kind {
            SeqKind::Alternating | SeqKind::Drifting => false,
            SeqKind::User(sets) => sets.windows(2).all(|w| w[0].is_subset(&w[1])),
            _ => true,
        }
    }

    /// For nested families, `F_n ∖ F_{n-1}` for `n = 1..=up_to` (with
    /// `F_0 = ∅`). Concatenated, they list `F_up_to`.
    pub fn increments(&self, up_to: usize) -> Result<Vec<Vec<Elem>>> {
        if !self.is_nested() {
            return Err(Error::InvalidParam(format!(
                "{} sequence is not nested",
                self.kind.tag()
            )));
        }
        if up_to > self.len {
            return Err(Error::InvalidParam(format!("index {up_to} outside 1..={}", self.len)));
        }
        let mut out = Vec::with_capacity(up_to);
        if let Some(first) = self.interval_bounds(1) {
            let mut hi = first.0;
            for n in 1..=up_to {
                let (_, b) = self.interval_bounds(n).expect("same kind at every index");
                out.push((hi..b).map(Elem::int).collect());
                hi = b;
            }
            return Ok(out);
        }
        let mut prev = FiniteRegion::empty(self.model);
        for n in 1..=up_to {
            let cur = self.set(n)?;
            if let (Some((a0, a1)), Some((b0, b1))) = (prev.as_index_range(), cur.as_index_range()) {
                if a0 == b0 {
                    out.push(((a1 + 1)..=b1).map(Elem::int).collect());
                    prev = cur;
                    continue;
                }
            }
            out.push(cur.difference(&prev)?.elements().to_vec());
            prev = cur;
        }
        Ok(out)
    }

    /// Materialized subfamily at the given indices (in order).
    pub fn subsequence(&self, indices: &[usize]) -> Result<FolnerSeq> {
        let sets = indices.iter().map(|&i| self.set(i)).collect::<Result<Vec<_>>>()?;
        FolnerSeq::user(self.model, sets)
    }
}

fn swiss_cheese(m: GroupModel, n: usize) -> FiniteRegion {
    let GroupModel::LatticeR { spacing } = m else {
        unreachable!("checked at construction")
    };
    let top = (n as f64 / spacing).round() as i64;
    let gap = ((1.0 / spacing).floor() as i64).max(2);
    let elems = (0..=top).filter(|k| k % gap != 0).map(Elem::int).collect();
    FiniteRegion::from_sorted(m, elems)
}

/// Parsed `--seq` argument: generator tag plus optional index range
/// (`pow2:1..6`).
#[derive(Clone, Debug, PartialEq)]
pub struct SeqSpec {
    pub kind: SeqKind,
    pub range: Option<(usize, usize)>,
}

impl SeqSpec {
    pub fn build(&self, model: GroupModel, len: usize) -> Result<FolnerSeq> {
        let len = self.range.map_or(len, |(_, hi)| hi.max(len));
        FolnerSeq::new(model, self.kind.clone(), len)
    }
}

impl FromStr for SeqSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (tag, range) = match s.split_once(':') {
            Some((t, r)) => (t.trim(), Some(parse_index_range(r)?)),
            None => (s.trim(), None),
        };
        let kind = match tag {
            "interval" => SeqKind::Interval,
            "pow2" => SeqKind::Pow2,
            "cube" => SeqKind::Cube,
            "heisbox" => SeqKind::HeisenbergBox,
            "swiss" => SeqKind::SwissCheese,
            "alternating" => SeqKind::Alternating,
            "drifting" => SeqKind::Drifting,
            _ => return Err(Error::parse("sequence", s, "unknown generator")),
        };
        Ok(SeqSpec { kind, range })
    }
}

impl fmt::Display for SeqSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.kind.tag())?;
        if let Some((a, b)) = self.range {
            write!(f, ":{a}..{b}")?;
        }
        Ok(())
    }
}

/// `"1..100"` (inclusive) or a single index.
pub fn parse_index_range(s: &str) -> Result<(usize, usize)> {
    let s = s.trim();
    let parse = |t: &str| {
        t.trim()
            .parse::<usize>()
            .map_err(|_| Error::parse("index range", s, "bad index"))
    };
    let (a, b) = match s.split_once("..") {
        Some((a, b)) => (parse(a)?, parse(b.trim_start_matches('='))?),
        None => {
            let n = parse(s)?;
            (n, n)
        }
    };
    if a == 0 || a > b {
        return Err(Error::parse("index range", s, "need 1 ≤ lo ≤ hi"));
    }
    Ok((a, b))
}

/// Finite-window stand-in for lower/upper density.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityEstimate {
    pub inf_value: f64,
    pub sup_value: f64,
    /// Inclusive index window `[N₀, N_max]` the extremes were taken over.
    pub window: (usize, usize),
    pub inf_at: usize,
    pub sup_at: usize,
}

impl DensityEstimate {
    pub(crate) fn from_values(window: (usize, usize), values: &[f64]) -> Self {
        let mut est = DensityEstimate {
            inf_value: f64::INFINITY,
            sup_value: f64::NEG_INFINITY,
            window,
            inf_at: window.0,
            sup_at: window.0,
        };
        for (k, &v) in values.iter().enumerate() {
            let n = window.0 + k;
            if v < est.inf_value {
                est.inf_value = v;
                est.inf_at = n;
            }
            if v > est.sup_value {
                est.sup_value = v;
                est.sup_at = n;
            }
        }
        est
    }
}

fn check_window(seq: &FolnerSeq, window: (usize, usize)) -> Result<()> {
    if window.0 == 0 || window.0 > window.1 || window.1 > seq.len() {
        return Err(Error::InvalidParam(format!(
            "density window {:?} not within 1..={}",
            window,
            seq.len()
        )));
    }
    Ok(())
}

/// `∂_K(F) = K⁻¹F ∩ K⁻¹F^∁`: points `a` whose translate `Ka` meets both `F`
/// and its complement.
pub fn k_boundary(k: &FiniteRegion, f: &FiniteRegion) -> Result<FiniteRegion> {
    if k.is_empty() {
        return Err(Error::Empty("K-boundary needs a nonempty K"));
    }
    if k.model() != f.model() {
        return Err(Error::ModelMismatch(format!("{} vs {}", k.model(), f.model())));
    }
    let m = f.model();
    if f.is_empty() {
        return Ok(FiniteRegion::empty(m));
    }
    if let (Some((k0, k1)), Some((f0, f1))) = (k.as_index_range(), f.as_index_range()) {
        // K⁻¹F = [f0-k1, f1-k0]; Ka ⊆ F iff a ∈ [f0-k0, f1-k1].
        let (lo, hi) = (f0 - k1, f1 - k0);
        let (in_lo, in_hi) = (f0 - k0, f1 - k1);
        let elems = (lo..=hi)
            .filter(|a| !(in_lo..=in_hi).contains(a))
            .map(Elem::int)
            .collect();
        return Ok(FiniteRegion::from_sorted(m, elems));
    }
    let candidates = k.inverse().product(f)?;
    let inside = f.hash_set();
    let kept = par::map_slice(candidates.elements(), |a| {
        k.iter().any(|kk| !inside.contains(&m.multiply(kk, a)))
    });
    let elems = candidates
        .iter()
        .zip(kept)
        .filter(|(_, keep)| *keep)
        .map(|(e, _)| *e)
        .collect();
    Ok(FiniteRegion::from_sorted(m, elems))
}

/// `|∂_K(F)|`, in constant time for contiguous one-dimensional runs.
pub fn k_boundary_len(k: &FiniteRegion, f: &FiniteRegion) -> Result<usize> {
    if let (Some((k0, k1)), Some((f0, f1))) = (k.as_index_range(), f.as_index_range()) {
        let all = (f1 - k0) - (f0 - k1) + 1;
        let inner = ((f1 - k1) - (f0 - k0) + 1).max(0);
        return Ok((all - inner) as usize);
    }
    Ok(k_boundary(k, f)?.len())
}

/// `|I ∩ K⁻¹I^∁|`, in constant time for contiguous one-dimensional runs.
pub fn inner_boundary_len(k: &FiniteRegion, i: &FiniteRegion) -> Result<usize> {
    if let (Some((k0, k1)), Some((i0, i1))) = (k.as_index_range(), i.as_index_range()) {
        let inner = ((i1 - k1).min(i1) - (i0 - k0).max(i0) + 1).max(0);
        return Ok((i1 - i0 + 1 - inner) as usize);
    }
    if k.is_empty() {
        return Err(Error::Empty("inner boundary needs a nonempty K"));
    }
    Ok(inner_boundary(k, i)?.len())
}

/// `I ∩ K⁻¹I^∁`: points of `I` some `K`-translate of which leaves `I`.
pub fn inner_boundary(k: &FiniteRegion, i: &FiniteRegion) -> Result<FiniteRegion> {
    if k.is_empty() {
        return Err(Error::Empty("inner boundary needs a nonempty K"));
    }
    let m = i.model();
    if let (Some((k0, k1)), Some((i0, i1))) = (k.as_index_range(), i.as_index_range()) {
        let (in_lo, in_hi) = (i0 - k0, i1 - k1);
        let elems = (i0..=i1)
            .filter(|a| !(in_lo..=in_hi).contains(a))
            .map(Elem::int)
            .collect();
        return Ok(FiniteRegion::from_sorted(m, elems));
    }
    let inside = i.hash_set();
    let kept = par::map_slice(i.elements(), |a| {
        k.iter().any(|kk| !inside.contains(&m.multiply(kk, a)))
    });
    let elems = i.iter().zip(kept).filter(|(_, keep)| *keep).map(|(e, _)| *e).collect();
    Ok(FiniteRegion::from_sorted(m, elems))
}

/// `|F Δ KF| / |F|`
pub fn weak_defect(k: &FiniteRegion, f: &FiniteRegion) -> Result<f64> {
    if f.is_empty() {
        return Err(Error::Empty("weak defect needs a nonempty F"));
    }
    let kf = k.product(f)?;
    let sd = f.symmetric_difference(&kf)?;
    Ok(sd.len() as f64 / f.len() as f64)
}

/// `|∂_K F| / |F|`
pub fn strong_defect(k: &FiniteRegion, f: &FiniteRegion) -> Result<f64> {
    if f.is_empty() {
        return Err(Error::Empty("strong defect needs a nonempty F"));
    }
    Ok(k_boundary(k, f)?.len() as f64 / f.len() as f64)
}

/// `|∪_{i<j} F_i⁻¹F_j| / |F_j|` for `j = 1..=up_to`; the first entry is 0
/// (empty union).
pub fn tempered_ratios(seq: &FolnerSeq, up_to: usize) -> Result<Vec<f64>> {
    if up_to > seq.len() {
        return Err(Error::InvalidParam(format!("index {up_to} outside 1..={}", seq.len())));
    }
    let m = seq.model();
    let mut out = Vec::with_capacity(up_to);
    // ∪_{i<j} F_i⁻¹F_j = (∪_{i<j} F_i⁻¹) F_j
    let mut inv_union = FiniteRegion::empty(m);
    for j in 1..=up_to {
        let fj = seq.set(j)?;
        if j == 1 {
            out.push(0.0);
        } else {
            let u = inv_union.product(&fj)?;
            out.push(u.len() as f64 / fj.len() as f64);
        }
        inv_union = inv_union.union(&fj.inverse())?;
        if inv_union.len() > SCALE_CAP {
            return Err(Error::ScaleCap {
                what: "tempered union",
                cap: SCALE_CAP,
            });
        }
    }
    Ok(out)
}

/// Smallest `C` with `|∪_{i<j} F_i⁻¹F_j| ≤ C|F_j|` for all `j ≤ up_to`.
pub fn tempered_constant(seq: &FolnerSeq, up_to: usize) -> Result<f64> {
    Ok(tempered_ratios(seq, up_to)?.into_iter().fold(0.0, f64::max))
}

/// Greedy extraction of a `C`-tempered subsequence: index `j` is kept iff
/// `|∪_{kept i<j} F_i⁻¹F_j| < C|F_j|`.
pub fn tempered_subsequence(seq: &FolnerSeq, c: f64) -> Result<Vec<usize>> {
    if c.is_nan() || c <= 1.0 {
        return Err(Error::InvalidParam(format!(
            "temperedness constant must exceed 1, got {c}"
        )));
    }
    let m = seq.model();
    let mut kept = Vec::new();
    let mut inv_union = FiniteRegion::empty(m);
    for j in 1..=seq.len() {
        let fj = seq.set(j)?;
        let size = inv_union.product(&fj)?.len() as f64;
        if size < c * fj.len() as f64 {
            kept.push(j);
            inv_union = inv_union.union(&fj.inverse())?;
            if inv_union.len() > SCALE_CAP {
                return Err(Error::ScaleCap {
                    what: "tempered union",
                    cap: SCALE_CAP,
                });
            }
        }
    }
    Ok(kept)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Strongified {
    /// `KF_n`
    pub region: FiniteRegion,
    /// `|K⁻¹KF_n Δ F_n| / |F_n|`, the quantity the construction needs small.
    pub measured_defect: f64,
    pub warning: Option<String>,
}

/// Replace `F_n` by `KF_n`, whose `K`-boundary lies inside `K⁻¹KF_n ∖ F_n`.
/// A failed precondition is reported, not fatal.
pub fn strongify(k: &FiniteRegion, f_n: &FiniteRegion, eps: f64) -> Result<Strongified> {
    let kk = k.inverse().product(k)?;
    let measured_defect = weak_defect(&kk, f_n)?;
    let warning = (measured_defect >= eps)
        .then(|| format!("weak defect of F_n under K⁻¹K is {measured_defect:.6}, not below {eps}"));
    Ok(Strongified {
        region: k.product(f_n)?,
        measured_defect,
        warning,
    })
}

/// Inf and sup of `|S ∩ F_N| / |F_N|` over `N` in the window.
pub fn lower_density<P>(member: P, seq: &FolnerSeq, window: (usize, usize)) -> Result<DensityEstimate>
where
    P: Fn(&Elem) -> bool + Sync + Send,
{
    check_window(seq, window)?;
    let n = window.1 - window.0 + 1;
    let values = par::map_range(n, |k| -> Result<f64> {
        let f = seq.set(window.0 + k)?;
        let hits = f.iter().filter(|e| member(e)).count();
        Ok(hits as f64 / f.len() as f64)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(DensityEstimate::from_values(window, &values))
}

/// Density of `members` in `F_N` for every `N` in the window, using the
/// increments of a nested family so the cost is one pass over `F_max`.
pub(crate) fn nested_density_profile(
    seq: &FolnerSeq,
    increments: &[Vec<Elem>],
    member: &FxHashSet<Elem>,
    window: (usize, usize),
) -> Vec<f64> {
    let mut hits = 0usize;
    let mut size = 0usize;
    let mut out = Vec::with_capacity(window.1 + 1 - window.0);
    for (k, inc) in increments.iter().enumerate().take(window.1) {
        size += inc.len();
        hits += inc.iter().filter(|e| member.contains(e)).count();
        if k + 1 >= window.0 {
            out.push(hits as f64 / size as f64);
        }
    }
    debug_assert!(seq.is_nested());
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DefectRow {
    pub n: usize,
    pub weak_defect: f64,
    pub strong_defect: f64,
    pub tempered_ratio: f64,
}

/// Per-index diagnostics over `range` (inclusive).
pub fn defect_table(seq: &FolnerSeq, k: &FiniteRegion, range: (usize, usize)) -> Result<Vec<DefectRow>> {
    check_window(seq, range)?;
    let ratios = tempered_ratios(seq, range.1)?;
    let count = range.1 - range.0 + 1;
    par::map_range(count, |i| {
        let n = range.0 + i;
        let f = seq.set(n)?;
        Ok(DefectRow {
            n,
            weak_defect: weak_defect(k, &f)?,
            strong_defect: strong_defect(k, &f)?,
            tempered_ratio: ratios[n - 1],
        })
    })
    .into_iter()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::parse_region;

    const Z: GroupModel = GroupModel::IntLine;

    fn z_interval(lo: i64, hi: i64) -> FiniteRegion {
        FiniteRegion::interval(Z, lo, hi).unwrap()
    }

    fn brute_boundary(k: &FiniteRegion, f: &FiniteRegion, window: &FiniteRegion) -> FiniteRegion {
        let comp = window.difference(f).unwrap();
        let kinv = k.inverse();
        let a = kinv.product(f).unwrap();
        let b = kinv.product(&comp).unwrap();
        a.intersection(&b).unwrap()
    }

    #[test]
    fn boundary_of_interval() {
        let k = parse_region(Z, "0,1").unwrap();
        let f = z_interval(0, 10);
        let b = k_boundary(&k, &f).unwrap();
        assert_eq!(b, parse_region(Z, "-1,9").unwrap());
        assert_eq!(b, brute_boundary(&k, &f, &z_interval(-20, 31)));
        assert_eq!(weak_defect(&k, &f).unwrap(), 0.1);
        assert_eq!(strong_defect(&k, &f).unwrap(), 0.2);
    }

    #[test]
    fn identity_k_has_no_boundary() {
        let k = FiniteRegion::singleton(Z, Elem::IDENTITY).unwrap();
        let f = z_interval(3, 17);
        assert!(k_boundary(&k, &f).unwrap().is_empty());
        assert_eq!(weak_defect(&k, &f).unwrap(), 0.0);
        assert_eq!(strong_defect(&k, &f).unwrap(), 0.0);
    }

    #[test]
    fn heisenberg_boundary_matches_brute_force() {
        let h = GroupModel::Heisenberg;
        let k = FiniteRegion::new(h, [Elem::IDENTITY, Elem::triple(1, 0, 0)]).unwrap();
        let f = FiniteRegion::coord_box(h, &[0, 0, 0], &[3, 3, 3]).unwrap();
        let b = k_boundary(&k, &f).unwrap();
        let window = FiniteRegion::coord_box(h, &[-4, -4, -8], &[6, 6, 12]).unwrap();
        assert!(k.product(&k.inverse().product(&f).unwrap()).unwrap().is_subset(&window));
        assert_eq!(b, brute_boundary(&k, &f, &window));
        assert!(!b.is_empty());
    }

    #[test]
    fn empty_inputs() {
        let f = z_interval(0, 5);
        assert!(k_boundary(&FiniteRegion::empty(Z), &f).is_err());
        assert!(weak_defect(&f, &FiniteRegion::empty(Z)).is_err());
        assert!(strong_defect(&f, &FiniteRegion::empty(Z)).is_err());
    }

    #[test]
    fn tempered_interval_family() {
        let seq = FolnerSeq::new(Z, SeqKind::Interval, 10).unwrap();
        assert!((tempered_constant(&seq, 10).unwrap() - 1.8).abs() < 1e-15);
        let one = FolnerSeq::new(Z, SeqKind::Interval, 1).unwrap();
        assert_eq!(tempered_constant(&one, 1).unwrap(), 0.0);
    }

    #[test]
    fn tempered_dyadic_family() {
        let seq = FolnerSeq::new(Z, SeqKind::Pow2, 6).unwrap();
        let c = tempered_constant(&seq, 6).unwrap();
        assert!(c <= 1.5 + 0.5f64.powi(1), "{c}");
        assert!((c - (1.5 - 1.0 / 64.0)).abs() < 1e-15);
    }

    #[test]
    fn subsequence_keeps_everything_when_allowed() {
        let seq = FolnerSeq::new(Z, SeqKind::Interval, 40).unwrap();
        assert_eq!(tempered_subsequence(&seq, 2.5).unwrap(), (1..=40).collect::<Vec<_>>());
        assert_eq!(tempered_subsequence(&seq, 1e9).unwrap().len(), 40);
        assert!(tempered_subsequence(&seq, 1.0).is_err());
    }

    #[test]
    fn subsequence_of_adversarial_family_is_tempered() {
        for kind in [SeqKind::Alternating, SeqKind::Drifting] {
            let seq = FolnerSeq::new(Z, kind, 12).unwrap();
            for c in [1.2, 1.5, 2.0, 3.0] {
                let idx = tempered_subsequence(&seq, c).unwrap();
                let sub = seq.subsequence(&idx).unwrap();
                assert!(tempered_constant(&sub, sub.len()).unwrap() <= c);
            }
        }
        let drift = FolnerSeq::new(Z, SeqKind::Drifting, 30).unwrap();
        assert!(tempered_constant(&drift, 30).unwrap() > 10.0);
    }

    #[test]
    fn strongify_identity_is_noop() {
        let k = FiniteRegion::singleton(Z, Elem::IDENTITY).unwrap();
        let f = parse_region(Z, "0,2,3,7").unwrap();
        let s = strongify(&k, &f, 0.1).unwrap();
        assert_eq!(s.region, f);
        assert!(s.warning.is_none());
    }

    #[test]
    fn strongify_interval_inclusion() {
        let k = parse_region(Z, "0,1").unwrap();
        let f = z_interval(0, 100);
        let s = strongify(&k, &f, 0.05).unwrap();
        let kf = &s.region;
        let bd = k_boundary(&k, kf).unwrap();
        let kkf = k.inverse().product(&k).unwrap().product(&f).unwrap();
        assert!(bd.is_subset(&kkf.difference(&f).unwrap()));
        assert!(bd.len() <= kkf.symmetric_difference(&f).unwrap().len());
    }

    #[test]
    fn strongify_warns_on_large_defect() {
        let k = parse_region(Z, "0,5").unwrap();
        let f = z_interval(0, 10);
        let s = strongify(&k, &f, 0.01).unwrap();
        assert!(s.warning.is_some());
    }

    #[test]
    fn swiss_cheese_separation_small() {
        let m = GroupModel::lattice_r(0.01).unwrap();
        let seq = FolnerSeq::new(m, SeqKind::SwissCheese, 10).unwrap();
        let f10 = seq.set(10).unwrap();
        let k = parse_region(m, "-1..0").unwrap();
        assert!(strong_defect(&k, &f10).unwrap() >= 0.9);
        let gap_mass = 11.0 * 0.01;
        assert!(weak_defect(&k, &f10).unwrap() <= (1.0 + 0.01 + gap_mass) / f10.measure() + 1e-12);
        let s = strongify(&k, &f10, 1.0).unwrap();
        // KF₁₀ = [-0.99, 9.99] since 0 and 10 are holes; two unit collars remain
        assert_eq!(strong_defect(&k, &s.region).unwrap(), 200.0 / 1099.0);
        assert!(seq.is_nested());
    }

    #[test]
    fn density_of_evens() {
        let seq = FolnerSeq::new(Z, SeqKind::Interval, 1000).unwrap();
        let d = lower_density(|e| e.x() % 2 == 0, &seq, (500, 1000)).unwrap();
        assert!(d.inf_value >= 0.499 && d.inf_value <= 0.5);
        assert!(d.inf_value <= d.sup_value);
        let all = lower_density(|_| true, &seq, (1, 50)).unwrap();
        assert_eq!((all.inf_value, all.sup_value), (1.0, 1.0));
        let fin = lower_density(|e| (0..3).contains(&e.x()), &seq, (100, 1000)).unwrap();
        assert!(fin.inf_value <= 3.0 / 100.0);
        assert!(lower_density(|_| true, &seq, (0, 10)).is_err());
    }

    #[test]
    fn increments_reassemble_sets() {
        let seq = FolnerSeq::new(GroupModel::IntGrid { dim: 2 }, SeqKind::Cube, 6).unwrap();
        let inc = seq.increments(6).unwrap();
        let all: Vec<Elem> = inc.concat();
        assert_eq!(FiniteRegion::new(seq.model(), all).unwrap(), seq.set(6).unwrap());
        let zseq = FolnerSeq::new(Z, SeqKind::Interval, 5).unwrap();
        assert_eq!(zseq.increments(5).unwrap()[4], vec![Elem::int(4)]);
        let alt = FolnerSeq::new(Z, SeqKind::Alternating, 5).unwrap();
        assert!(alt.increments(5).is_err());
    }

    #[test]
    fn seq_spec_parsing() {
        let s: SeqSpec = "pow2:1..6".parse().unwrap();
        assert_eq!(s.kind, SeqKind::Pow2);
        assert_eq!(s.range, Some((1, 6)));
        assert_eq!(s.to_string(), "pow2:1..6");
        assert!("blob".parse::<SeqSpec>().is_err());
        assert!(FolnerSeq::new(Z, SeqKind::HeisenbergBox, 3).is_err());
    }

    #[test]
    fn defect_rows() {
        let seq = FolnerSeq::new(Z, SeqKind::Interval, 20).unwrap();
        let k = parse_region(Z, "0,1").unwrap();
        let rows = defect_table(&seq, &k, (10, 20)).unwrap();
        assert_eq!(rows.len(), 11);
        assert_eq!(rows[0].n, 10);
        assert_eq!(rows[0].strong_defect, 0.2);
        assert!((rows[0].tempered_ratio - 1.8).abs() < 1e-15);
    }

    #[test]
    fn boundary_lengths_match_regions() {
        for (k0, k1) in [(0, 0), (0, 3), (-2, 1), (-5, -1), (2, 9)] {
            let k = z_interval(k0, k1 + 1);
            for (f0, f1) in [(0, 1), (0, 4), (-3, 7), (5, 30)] {
                let f = z_interval(f0, f1 + 1);
                assert_eq!(k_boundary_len(&k, &f).unwrap(), k_boundary(&k, &f).unwrap().len());
                assert_eq!(
                    inner_boundary_len(&k, &f).unwrap(),
                    inner_boundary(&k, &f).unwrap().len()
                );
            }
        }
    }
}
