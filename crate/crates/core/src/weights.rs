//! Bounded weights on a group window, their self-correlations, the good
//! sets `S_{δ,L,R}(c)`, exceptional sets `A_N`, and a finite-horizon check
//! of the orthogonality condition.

use std::path::Path;

use rustc_hash::{FxHashMap, FxHashSet};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::folner::{nested_density_profile, DensityEstimate, FolnerSeq};
use crate::group::{Elem, FiniteRegion, GroupModel};
use crate::par;
use crate::rng::StreamKey;
use crate::sum::NeumaierSum;
use crate::torus::Phase;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Orbit,
    Synthetic,
    File,
}

#[derive(Clone, Debug)]
enum Store {
    /// One-dimensional contiguous window starting at lattice index `offset`.
    Dense {
        offset: i64,
        values: Vec<f64>,
    },
    Sparse(FxHashMap<Elem, f64>),
}

/// A real function on a finite window of the group, bounded by 1.
#[derive(Clone, Debug)]
pub struct WeightFn {
    domain: FiniteRegion,
    store: Store,
    provenance: Provenance,
}

impl WeightFn {
    /// Evaluate `f` on every point of `domain`.
    pub fn from_fn<F>(domain: FiniteRegion, provenance: Provenance, f: F) -> Result<Self>
    where
        F: Fn(&Elem) -> f64 + Sync + Send,
    {
        let values = par::map_slice(domain.elements(), f);
        Self::from_values(domain, values, provenance)
    }

    /// `values[i]` is the weight at `domain.elements()[i]`.
    pub fn from_values(domain: FiniteRegion, values: Vec<f64>, provenance: Provenance) -> Result<Self> {
        if values.len() != domain.len() {
            return Err(Error::InvalidParam(format!(
                "{} values for a window of {} points",
                values.len(),
                domain.len()
            )));
        }
        if let Some((e, v)) = domain.iter().zip(&values).find(|(_, v)| !(v.abs() <= 1.0)) {
            return Err(Error::Unbounded { elem: *e, value: *v });
        }
        let store = match domain.as_index_range() {
            Some((lo, _)) => Store::Dense { offset: lo, values },
            None => Store::Sparse(domain.iter().copied().zip(values).collect()),
        };
        Ok(WeightFn {
            domain,
            store,
            provenance,
        })
    }

    pub fn model(&self) -> GroupModel {
        self.domain.model()
    }

    pub fn domain(&self) -> &FiniteRegion {
        &self.domain
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    #[inline]
    pub fn value(&self, e: &Elem) -> Option<f64> {
        match &self.store {
            Store::Dense { offset, values } => {
                let i = e.x().checked_sub(*offset)?;
                if i < 0 || e.coords()[1..].iter().any(|&c| c != 0) {
                    return None;
                }
                values.get(i as usize).copied()
            }
            Store::Sparse(map) => map.get(e).copied(),
        }
    }

    pub fn at(&self, e: &Elem) -> Result<f64> {
        self.value(e).ok_or_else(|| Error::OutOfWindow {
            elem: *e,
            context: format!("weight window holds {} points", self.domain.len()),
        })
    }

    fn dense(&self) -> Option<(i64, &[f64])> {
        match &self.store {
            Store::Dense { offset, values } => Some((*offset, values)),
            Store::Sparse(_) => None,
        }
    }

    /// Plain CSV: one point per line, coordinates then value
    /// (`n,value` in ℤ, `x,y,value` in ℤ², `x,value` in real units for εℤ).
    /// Blank lines and lines starting with `#` are skipped, as is a
    /// non-numeric header line.
    pub fn load_csv(model: GroupModel, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let d = model.dims();
        let mut pts = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let nums: std::result::Result<Vec<f64>, _> = fields.iter().map(|f| f.parse::<f64>()).collect();
            let Ok(nums) = nums else {
                if lineno == 0 {
                    continue;
                }
                return Err(Error::parse(
                    "weight CSV",
                    line,
                    format!("non-numeric field on line {}", lineno + 1),
                ));
            };
            if nums.len() != d + 1 {
                return Err(Error::parse("weight CSV", line, format!("expected {} fields", d + 1)));
            }
            let e = match model {
                GroupModel::LatticeR { .. } => model.lattice_point(nums[0])?,
                _ => {
                    let coords: Vec<i64> = nums[..d].iter().map(|&x| x as i64).collect();
                    if nums[..d].iter().zip(&coords).any(|(x, c)| *x != *c as f64) {
                        return Err(Error::parse("weight CSV", line, "coordinates must be integers"));
                    }
                    Elem::from_coords(&coords).expect("dims ≤ MAX_COORDS")
                }
            };
            let v = nums[d];
            if !(v.abs() <= 1.0) {
                return Err(Error::Unbounded { elem: e, value: v });
            }
            pts.push((e, v));
        }
        pts.sort_by_key(|a| a.0);
        if pts.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::parse(
                "weight CSV",
                &path.display().to_string(),
                "duplicate point",
            ));
        }
        let (elems, values): (Vec<Elem>, Vec<f64>) = pts.into_iter().unzip();
        let domain = FiniteRegion::new(model, elems)?;
        Self::from_values(domain, values, Provenance::File)
    }
}

pub fn zero_weight(domain: FiniteRegion) -> WeightFn {
    WeightFn::from_fn(domain, Provenance::Synthetic, |_| 0.0).expect("bounded")
}

pub fn constant_weight(domain: FiniteRegion, v: f64) -> Result<WeightFn> {
    WeightFn::from_fn(domain, Provenance::Synthetic, |_| v)
}

/// `(-1)^{x}` on the first coordinate.
pub fn alternating_weight(domain: FiniteRegion) -> WeightFn {
    WeightFn::from_fn(domain, Provenance::Synthetic, |e| {
        if e.x().rem_euclid(2) == 0 {
            1.0
        } else {
            -1.0
        }
    })
    .expect("bounded")
}

/// Independent fair ±1 values keyed by `seed`.
pub fn bernoulli_weight(domain: FiniteRegion, seed: u64) -> WeightFn {
    let key = StreamKey::new(seed);
    WeightFn::from_fn(domain, Provenance::Synthetic, move |e| key.sign_at(e)).expect("bounded")
}

/// `cos(2π θ·x)` on the first coordinate.
pub fn cosine_weight(domain: FiniteRegion, theta: f64) -> WeightFn {
    let t = Phase::from_f64(theta);
    WeightFn::from_fn(domain, Provenance::Synthetic, move |e| t.times(e.x()).cos()).expect("bounded")
}

/// `E_{g∈F} c(g)c(ga)`
pub fn self_correlation(c: &WeightFn, a: &Elem, f_n: &FiniteRegion) -> Result<f64> {
    cross_correlation(c, c, a, f_n)
}

/// `E_{g∈F} c(g)f(ga)`
pub fn cross_correlation(c: &WeightFn, f: &WeightFn, a: &Elem, f_n: &FiniteRegion) -> Result<f64> {
    if f_n.is_empty() {
        return Err(Error::Empty("averaging set"));
    }
    let m = c.model();
    let mut s = NeumaierSum::new();
    for g in f_n {
        s.add(c.at(g)? * f.at(&m.multiply(g, a))?);
    }
    Ok(s.value() / f_n.len() as f64)
}

/// The family `(F_n)` laid out for repeated averaging: either a flat list
/// of nested increments with running ends, or explicit sets.
enum Layout {
    Nested { flat: Vec<Elem>, ends: Vec<usize> },
    Explicit(FxHashMap<usize, FiniteRegion>),
}

impl Layout {
    fn build(seq: &FolnerSeq, needed: &[usize]) -> Result<Self> {
        let max_n = needed.iter().copied().max().unwrap_or(0);
        if max_n == 0 {
            return Err(Error::InvalidParam("no scales requested".into()));
        }
        if seq.is_nested() {
            let inc = seq.increments(max_n)?;
            let mut flat = Vec::with_capacity(inc.iter().map(Vec::len).sum());
            let mut ends = Vec::with_capacity(max_n);
            for block in inc {
                flat.extend(block);
                ends.push(flat.len());
            }
            Ok(Layout::Nested { flat, ends })
        } else {
            let mut sets = FxHashMap::default();
            for &n in needed {
                if let std::collections::hash_map::Entry::Vacant(v) = sets.entry(n) {
                    v.insert(seq.set(n)?);
                }
            }
            Ok(Layout::Explicit(sets))
        }
    }
}

/// For each probe point `a` and each scale interval `[L, R]`, the maximum
/// over `L ≤ n ≤ R` of `|E_{g∈F_n} c(g) f(ga)|`.
pub fn max_abs_correlations(
    c: &WeightFn,
    f: &WeightFn,
    seq: &FolnerSeq,
    probe: &[Elem],
    intervals: &[(usize, usize)],
) -> Result<Vec<Vec<f64>>> {
    if c.model() != seq.model() || f.model() != seq.model() {
        return Err(Error::ModelMismatch(
            "weight and sequence live on different groups".into(),
        ));
    }
    for &(l, r) in intervals {
        if l == 0 || l > r || r > seq.len() {
            return Err(Error::InvalidParam(format!(
                "scale interval [{l}, {r}] not within 1..={}",
                seq.len()
            )));
        }
    }
    let mut needed: Vec<usize> = intervals.iter().flat_map(|&(l, r)| l..=r).collect();
    needed.sort_unstable();
    needed.dedup();
    let layout = Layout::build(seq, &needed)?;
    let m = seq.model();
    let max_n = *needed.last().expect("intervals are nonempty");

    if let (Layout::Nested { flat, ends }, Some((c_off, cv)), Some((f_off, fv))) = (&layout, c.dense(), f.dense()) {
        if m.dims() == 1 && !probe.is_empty() {
            return dense_nested_scan(flat, ends, (c_off, cv), (f_off, fv), probe, intervals);
        }
    }

    par::map_slice(probe, |a| -> Result<Vec<f64>> {
        // avgs[n - 1] = |E_{g∈F_n} c(g) f(ga)|, zero where not needed
        let mut avgs = vec![0.0f64; max_n];
        match &layout {
            Layout::Nested { flat, ends } => {
                let mut s = NeumaierSum::new();
                let mut start = 0;
                for (idx, &end) in ends.iter().enumerate() {
                    for g in &flat[start..end] {
                        s.add(c.at(g)? * f.at(&m.multiply(g, a))?);
                    }
                    start = end;
                    avgs[idx] = (s.value() / end as f64).abs();
                }
            }
            Layout::Explicit(sets) => {
                for &n in &needed {
                    avgs[n - 1] = cross_correlation(c, f, a, &sets[&n])?.abs();
                }
            }
        }
        Ok(interval_maxima(&avgs, intervals))
    })
    .into_iter()
    .collect()
}

fn dense_nested_scan(
    flat: &[Elem],
    ends: &[usize],
    (c_off, cv): (i64, &[f64]),
    (f_off, fv): (i64, &[f64]),
    probe: &[Elem],
    intervals: &[(usize, usize)],
) -> Result<Vec<Vec<f64>>> {
    let last = *ends.last().expect("nonempty layout");
    let gs: Vec<i64> = flat[..last].iter().map(Elem::x).collect();
    let (gmin, gmax) = gs
        .iter()
        .fold((i64::MAX, i64::MIN), |(lo, hi), &g| (lo.min(g), hi.max(g)));
    let c_hi = c_off + cv.len() as i64 - 1;
    let f_hi = f_off + fv.len() as i64 - 1;
    if gmin < c_off || gmax > c_hi {
        return Err(Error::OutOfWindow {
            elem: Elem::int(if gmin < c_off { gmin } else { gmax }),
            context: format!("averaging sets need weight window [{gmin}, {gmax}], have [{c_off}, {c_hi}]"),
        });
    }
    let (amin, amax) = probe
        .iter()
        .fold((i64::MAX, i64::MIN), |(lo, hi), a| (lo.min(a.x()), hi.max(a.x())));
    if gmin + amin < f_off || gmax + amax > f_hi {
        return Err(Error::OutOfWindow {
            elem: Elem::int(if gmin + amin < f_off { gmin + amin } else { gmax + amax }),
            context: format!(
                "translated averages need window [{}, {}], have [{f_off}, {f_hi}]",
                gmin + amin,
                gmax + amax
            ),
        });
    }
    let cs: Vec<f64> = gs.iter().map(|&g| cv[(g - c_off) as usize]).collect();
    Ok(par::map_slice(probe, |a| {
        let shift = a.x() - f_off;
        let mut avgs = Vec::with_capacity(ends.len());
        let mut s = NeumaierSum::new();
        let mut start = 0;
        for &end in ends {
            for i in start..end {
                s.add(cs[i] * fv[(gs[i] + shift) as usize]);
            }
            start = end;
            avgs.push((s.value() / end as f64).abs());
        }
        interval_maxima(&avgs, intervals)
    }))
}

/// `max avgs[l-1..r]` for each `(l, r)`.
fn interval_maxima(avgs: &[f64], intervals: &[(usize, usize)]) -> Vec<f64> {
    intervals
        .iter()
        .map(|&(l, r)| avgs[l - 1..r].iter().copied().fold(0.0, f64::max))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GoodSetReport {
    pub delta: f64,
    pub l: usize,
    pub r: usize,
    /// `S_{δ,L,R}(c)` intersected with the probe window.
    pub members: FiniteRegion,
    pub density: DensityEstimate,
}

fn density_in_probe(
    seq: &FolnerSeq,
    probe: &FiniteRegion,
    members: &FxHashSet<Elem>,
    window: (usize, usize),
) -> Result<DensityEstimate> {
    if window.0 == 0 || window.0 > window.1 || window.1 > seq.len() {
        return Err(Error::InvalidParam(format!(
            "density window {window:?} not within 1..={}",
            seq.len()
        )));
    }
    if seq.is_nested() {
        if !seq.set(window.1)?.is_subset(probe) {
            return Err(Error::InvalidParam(format!(
                "F_{} is not inside the probe window",
                window.1
            )));
        }
        let inc = seq.increments(window.1)?;
        let values = nested_density_profile(seq, &inc, members, window);
        return Ok(DensityEstimate::from_values(window, &values));
    }
    for n in window.0..=window.1 {
        if !seq.set(n)?.is_subset(probe) {
            return Err(Error::InvalidParam(format!("F_{n} is not inside the probe window")));
        }
    }
    crate::folner::lower_density(|e| members.contains(e), seq, window)
}

/// `S_{δ,L,R}(c) = {a : |E_{g∈F_n} c(g)c(ga)| < δ for all L ≤ n ≤ R}` on the
/// probe, with its density along `seq` over `density_window` (each `F_N` in
/// the window must lie inside the probe).
pub fn good_set(
    c: &WeightFn,
    delta: f64,
    l: usize,
    r: usize,
    seq: &FolnerSeq,
    probe: &FiniteRegion,
    density_window: (usize, usize),
) -> Result<GoodSetReport> {
    if !(delta > 0.0) {
        return Err(Error::InvalidParam(format!("δ must be positive, got {delta}")));
    }
    let maxima = max_abs_correlations(c, c, seq, probe.elements(), &[(l, r)])?;
    let elems: Vec<Elem> = probe
        .iter()
        .zip(&maxima)
        .filter(|(_, m)| m[0] < delta)
        .map(|(e, _)| *e)
        .collect();
    let set: FxHashSet<Elem> = elems.iter().copied().collect();
    let density = density_in_probe(seq, probe, &set, density_window)?;
    Ok(GoodSetReport {
        delta,
        l,
        r,
        members: FiniteRegion::new(probe.model(), elems)?,
        density,
    })
}

/// Knobs of the finite-horizon orthogonality check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerpParams {
    pub deltas: Vec<f64>,
    /// Candidate values of `N_δ`, ascending.
    pub ladder: Vec<usize>,
    /// Probe points are `F_probe_index`.
    pub probe_index: usize,
    pub density_window: (usize, usize),
}

pub const DEFAULT_DELTAS: [f64; 3] = [0.2, 0.1, 0.05];

impl PerpParams {
    /// Defaults for an interval family on ℤ whose weight is known on
    /// `[0, horizon)`: probe `F_P` with `P` the largest power of two
    /// `≤ horizon/32`, density window `[P/4, P]`, and a dyadic `N_δ` ladder
    /// from 16 while `4N_δ + P ≤ horizon`.
    pub fn for_horizon(horizon: usize, deltas: &[f64]) -> Result<Self> {
        let mut p = 16usize;
        while p * 2 <= horizon / 32 {
            p *= 2;
        }
        let mut ladder = Vec::new();
        let mut n = 16usize;
        while 4 * n + p <= horizon {
            ladder.push(n);
            n *= 2;
        }
        if ladder.is_empty() || horizon < 32 * 16 {
            return Err(Error::InvalidParam(format!(
                "horizon {horizon} too small for an orthogonality check"
            )));
        }
        Ok(PerpParams {
            deltas: deltas.to_vec(),
            ladder,
            probe_index: p,
            density_window: (p / 4, p),
        })
    }

    /// Largest scale index the check will average over.
    pub fn max_scale(&self) -> usize {
        self.ladder.iter().map(|&n| 4 * n).max().unwrap_or(0)
    }
}

/// `(L, R)` pairs probed at a ladder rung `N`.
pub fn rung_pairs(n: usize) -> [(usize, usize); 3] {
    [(n, n), (n, 2 * n), (2 * n, 4 * n)]
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PairOutcome {
    pub l: usize,
    pub r: usize,
    pub density: DensityEstimate,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RungOutcome {
    pub n: usize,
    pub pairs: Vec<PairOutcome>,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Witness {
    pub n: usize,
    pub l: usize,
    pub r: usize,
    pub density: f64,
    /// `1 − density`: the share of probed translates that correlate.
    pub exceptional_density: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DeltaVerdict {
    pub delta: f64,
    pub n_delta: Option<usize>,
    pub worst_density: f64,
    pub rungs: Vec<RungOutcome>,
    pub witness: Option<Witness>,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PerpVerdict {
    pub params: PerpParams,
    pub pair_rule: &'static str,
    pub deltas: Vec<DeltaVerdict>,
    pub passed: bool,
}

/// Finite-horizon orthogonality check: for each δ, the first ladder rung
/// `N_δ` such that every probed `[L, R]` has good-set density `> 1 − δ`.
pub fn check_perp(c: &WeightFn, seq: &FolnerSeq, params: &PerpParams) -> Result<PerpVerdict> {
    if params.deltas.iter().any(|d| !(*d > 0.0)) {
        return Err(Error::InvalidParam("every δ must be positive".into()));
    }
    if params.ladder.is_empty() {
        return Err(Error::InvalidParam("empty N_δ ladder".into()));
    }
    if params.max_scale() > seq.len() {
        return Err(Error::InvalidParam(format!(
            "ladder reaches scale {}, sequence has {}",
            params.max_scale(),
            seq.len()
        )));
    }
    let probe = seq.set(params.probe_index)?;
    let intervals: Vec<(usize, usize)> = params.ladder.iter().flat_map(|&n| rung_pairs(n)).collect();
    let maxima = max_abs_correlations(c, c, seq, probe.elements(), &intervals)?;

    let inc = if seq.is_nested() {
        Some(seq.increments(params.density_window.1)?)
    } else {
        None
    };
    let density_of = |k: usize, delta: f64| -> Result<DensityEstimate> {
        let members: FxHashSet<Elem> = probe
            .iter()
            .zip(&maxima)
            .filter(|(_, m)| m[k] < delta)
            .map(|(e, _)| *e)
            .collect();
        match &inc {
            Some(inc) => {
                let v = nested_density_profile(seq, inc, &members, params.density_window);
                Ok(DensityEstimate::from_values(params.density_window, &v))
            }
            None => density_in_probe(seq, &probe, &members, params.density_window),
        }
    };

    let mut verdicts = Vec::with_capacity(params.deltas.len());
    for &delta in &params.deltas {
        let mut rungs = Vec::new();
        let mut n_delta = None;
        for (ri, &n) in params.ladder.iter().enumerate() {
            let pairs = rung_pairs(n)
                .iter()
                .enumerate()
                .map(|(pi, &(l, r))| {
                    Ok(PairOutcome {
                        l,
                        r,
                        density: density_of(3 * ri + pi, delta)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let passed = pairs.iter().all(|p| p.density.inf_value > 1.0 - delta);
            rungs.push(RungOutcome { n, pairs, passed });
            if passed {
                n_delta = Some(n);
                break;
            }
        }
        let last = rungs.last().expect("nonempty ladder");
        let worst = last
            .pairs
            .iter()
            .min_by(|a, b| a.density.inf_value.total_cmp(&b.density.inf_value))
            .expect("three pairs per rung");
        let witness = n_delta.is_none().then_some(Witness {
            n: last.n,
            l: worst.l,
            r: worst.r,
            density: worst.density.inf_value,
            exceptional_density: 1.0 - worst.density.inf_value,
        });
        verdicts.push(DeltaVerdict {
            delta,
            n_delta,
            worst_density: worst.density.inf_value,
            passed: n_delta.is_some(),
            rungs,
            witness,
        });
    }
    let passed = verdicts.iter().all(|v| v.passed);
    Ok(PerpVerdict {
        params: params.clone(),
        pair_rule: "(N,N), (N,2N), (2N,4N)",
        deltas: verdicts,
        passed,
    })
}

/// `A_N = {a : |E_{g∈F_N} c(g)f(ga)| ≥ ε}` on the probe.
pub fn exceptional_set(
    c: &WeightFn,
    f: &WeightFn,
    eps: f64,
    f_n: &FiniteRegion,
    probe: &FiniteRegion,
) -> Result<FiniteRegion> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParam(format!("ε must be positive, got {eps}")));
    }
    let flags = par::map_slice(probe.elements(), |a| {
        cross_correlation(c, f, a, f_n).map(|v| v.abs() >= eps)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let elems: Vec<Elem> = probe
        .iter()
        .zip(flags)
        .filter(|(_, hit)| *hit)
        .map(|(e, _)| *e)
        .collect();
    FiniteRegion::new(probe.model(), elems)
}
