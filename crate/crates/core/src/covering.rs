//! Poisson point processes on group windows and the descending random
//! covering recursion, with Monte Carlo estimates of its moment bounds.

use std::sync::Arc;

use rand::rngs::SmallRng;
use rand::SeedableRng;
use rand_distr::{Distribution, Poisson};
use rustc_hash::{FxHashMap, FxHashSet};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::folner::{tempered_constant, FolnerSeq};
use crate::group::{parse_region, Elem, FiniteRegion, GroupModel};
use crate::par;
use crate::rng::StreamKey;
use crate::sum::NeumaierSum;

/// Below this mean the sampler inverts the CDF directly.
const INVERSION_LIMIT: f64 = 30.0;

/// Stream labels of the master seed.
const TRIAL_STREAMS: u64 = 0x7472_6961_6c73;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoissonParams {
    /// Temperedness constant `C` the sequence is assumed to satisfy.
    pub temper_c: f64,
    /// Scale-free intensity `κ`; scale `N` uses `α_N = κ/|F_N|`.
    pub intensity: f64,
    pub seed: u64,
}

impl PoissonParams {
    /// `κ = 1/C`.
    pub fn new(temper_c: f64, seed: u64) -> Result<Self> {
        let p = PoissonParams {
            temper_c,
            intensity: 1.0 / temper_c,
            seed,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_intensity(mut self, kappa: f64) -> Result<Self> {
        self.intensity = kappa;
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        if !(self.temper_c >= 1.0) || !self.temper_c.is_finite() {
            return Err(Error::InvalidParam(format!(
                "C must be a finite number ≥ 1, got {}",
                self.temper_c
            )));
        }
        if !(self.intensity >= 0.0) || !self.intensity.is_finite() {
            return Err(Error::InvalidParam(format!(
                "intensity must be finite and ≥ 0, got {}",
                self.intensity
            )));
        }
        Ok(())
    }

    pub fn alpha(&self, f_n: &FiniteRegion) -> f64 {
        self.intensity / f_n.measure()
    }
}

/// One Poisson(λ) draw driven entirely by `bits`.
pub fn poisson_from_bits(lambda: f64, bits: u64) -> u32 {
    if lambda <= 0.0 {
        return 0;
    }
    if lambda < INVERSION_LIMIT {
        let u = (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        let mut p = (-lambda).exp();
        let mut cdf = p;
        let mut k = 0u32;
        while u >= cdf && k < 10_000 {
            k += 1;
            p *= lambda / k as f64;
            let next = cdf + p;
            if next == cdf {
                break;
            }
            cdf = next;
        }
        k
    } else {
        let mut rng = SmallRng::seed_from_u64(bits);
        let d = Poisson::new(lambda).expect("positive finite mean");
        d.sample(&mut rng) as u32
    }
}

/// Multiplicity of `e` in the process keyed by `key` at intensity `α`.
/// Being a pure function of `(key, e)`, restricting a process to a subset
/// is literal restriction.
#[inline]
pub fn multiplicity(key: StreamKey, alpha: f64, haar: f64, e: &Elem) -> u32 {
    poisson_from_bits(alpha * haar, key.bits_at(e))
}

/// Realization of the Poisson process with intensity `α` (per unit of Haar
/// measure) restricted to `region`: points with nonzero multiplicity.
pub fn sample_poisson(region: &FiniteRegion, alpha: f64, seed: u64) -> Result<Vec<(Elem, u32)>> {
    sample_keyed(region, alpha, StreamKey::new(seed))
}

fn sample_keyed(region: &FiniteRegion, alpha: f64, key: StreamKey) -> Result<Vec<(Elem, u32)>> {
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidParam(format!(
            "intensity must be finite and ≥ 0, got {alpha}"
        )));
    }
    if alpha == 0.0 {
        return Ok(Vec::new());
    }
    let haar = region.model().haar_weight();
    Ok(region
        .iter()
        .filter_map(|e| {
            let m = multiplicity(key, alpha, haar, e);
            (m > 0).then_some((*e, m))
        })
        .collect())
}

/// Per-scale target sets `A_{N|R+1}` from a spec string.
///
/// * `random:density=0.3,window=1000,seed=11` draws an independent subset of
///   the window `[0, window)` (per coordinate) for each scale.
/// * `set:<region>` uses the same region at every scale.
pub fn parse_targets(model: GroupModel, spec: &str, scales: (usize, usize)) -> Result<Vec<FiniteRegion>> {
    let count = scales.1 + 1 - scales.0;
    if let Some(rest) = spec.strip_prefix("set:") {
        let r = parse_region(model, rest)?;
        return Ok(vec![r; count]);
    }
    let Some(rest) = spec.strip_prefix("random:") else {
        return Err(Error::parse("targets", spec, "expected random:... or set:..."));
    };
    let (mut density, mut window, mut seed) = (None, None, None);
    for kv in rest.split(',') {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::parse("targets", spec, "expected key=value"))?;
        let bad = || Error::parse("targets", spec, format!("bad value for {k}"));
        match k.trim() {
            "density" => density = Some(v.trim().parse::<f64>().map_err(|_| bad())?),
            "window" => window = Some(v.trim().parse::<f64>().map_err(|_| bad())?),
            "seed" => seed = Some(v.trim().parse::<u64>().map_err(|_| bad())?),
            other => return Err(Error::parse("targets", spec, format!("unknown key {other}"))),
        }
    }
    let (Some(density), Some(window), Some(seed)) = (density, window, seed) else {
        return Err(Error::parse(
            "targets",
            spec,
            "density, window and seed are all required",
        ));
    };
    random_targets(model, density, window, seed, scales)
}

/// Independent Bernoulli(`density`) subsets of `[0, window)^d`, one per scale.
pub fn random_targets(
    model: GroupModel,
    density: f64,
    window: f64,
    seed: u64,
    scales: (usize, usize),
) -> Result<Vec<FiniteRegion>> {
    if !(0.0..=1.0).contains(&density) {
        return Err(Error::InvalidParam(format!("target density {density} not in [0, 1]")));
    }
    if !(window > 0.0) {
        return Err(Error::InvalidParam(format!("target window {window} must be positive")));
    }
    let base = match model {
        GroupModel::LatticeR { .. } => {
            let hi = model.lattice_point(window)?.x();
            FiniteRegion::interval(model, 0, hi)?
        }
        _ => {
            let w = window.round() as i64;
            let d = model.dims();
            FiniteRegion::coord_box(model, &vec![0; d], &vec![w; d])?
        }
    };
    let key = StreamKey::new(seed);
    (scales.0..=scales.1)
        .map(|n| {
            let k = key.derive(n as u64);
            FiniteRegion::new(model, base.iter().copied().filter(|e| k.uniform_at(e) < density))
        })
        .collect()
}

/// One realization of the random covering on scales `L..=R`.
#[derive(Clone, Debug)]
pub struct CoveringSample {
    scales: (usize, usize),
    sets: Arc<Vec<FiniteRegion>>,
    /// `Σ_N` as (center, multiplicity), indexed by `N − L`.
    sigma: Vec<Vec<(Elem, u32)>>,
    /// `A_{N|N+1}`, the set `Σ_N` was restricted to, indexed by `N − L`.
    pools: Vec<FiniteRegion>,
    window: Arc<FxHashSet<Elem>>,
}

impl CoveringSample {
    pub fn scales(&self) -> (usize, usize) {
        self.scales
    }

    pub fn model(&self) -> GroupModel {
        self.sets[0].model()
    }

    /// `Σ_N`.
    pub fn centers(&self, n: usize) -> &[(Elem, u32)] {
        &self.sigma[n - self.scales.0]
    }

    /// `A_{N|N+1}`.
    pub fn pool(&self, n: usize) -> &FiniteRegion {
        &self.pools[n - self.scales.0]
    }

    pub fn set(&self, n: usize) -> &FiniteRegion {
        &self.sets[n - self.scales.0]
    }

    pub fn total_centers(&self) -> u64 {
        self.sigma.iter().flatten().map(|&(_, m)| m as u64).sum()
    }

    /// Evaluation window `∪_N F_N A_{N|R+1}`: every point any covering
    /// piece can reach.
    pub fn in_window(&self, g: &Elem) -> bool {
        self.window.contains(g)
    }

    /// Number of pieces `F_N a`, `a ∈ Σ_N` (with multiplicity), that contain `g`.
    pub fn counting_function(&self, g: &Elem) -> Result<u64> {
        if !self.in_window(g) {
            return Err(Error::OutOfWindow {
                elem: *g,
                context: "covering evaluation window".into(),
            });
        }
        let m = self.model();
        let mut total = 0u64;
        for (k, centers) in self.sigma.iter().enumerate() {
            let f = &self.sets[k];
            for (a, mult) in centers {
                if f.contains(&m.multiply(g, &m.invert(a))) {
                    total += *mult as u64;
                }
            }
        }
        Ok(total)
    }

    /// `Λ` on its support.
    pub fn counting_map(&self) -> FxHashMap<Elem, u64> {
        let m = self.model();
        let mut out = FxHashMap::default();
        for (k, centers) in self.sigma.iter().enumerate() {
            for (a, mult) in centers {
                for f in &self.sets[k] {
                    *out.entry(m.multiply(f, a)).or_insert(0) += *mult as u64;
                }
            }
        }
        out
    }

    /// Both structural properties of the construction, checked exactly:
    /// `Σ_N ⊆ A_{N|N+1}`, and `F_i a ∩ F_N Σ_N = ∅` for `i < N` and every
    /// `a ∈ A_{i|i+1}`.
    pub fn verify_structure(&self) -> Result<()> {
        self.verify_with(|k| self.pools[k].elements().to_vec())
    }

    /// The disjointness property restricted to the centers `a ∈ Σ_i`.
    pub fn verify_centers(&self) -> Result<()> {
        self.verify_with(|k| self.sigma[k].iter().map(|(a, _)| *a).collect())
    }

    fn verify_with<P>(&self, points: P) -> Result<()>
    where
        P: Fn(usize) -> Vec<Elem>,
    {
        let m = self.model();
        let span = self.sigma.len();
        for (k, centers) in self.sigma.iter().enumerate() {
            if let Some((a, _)) = centers.iter().find(|(a, _)| !self.pools[k].contains(a)) {
                return Err(Error::InvalidParam(format!(
                    "center {a:?} of scale {} lies outside its target",
                    self.scales.0 + k
                )));
            }
        }
        // covered[k] = F_N Σ_N ∪ ... over all N with index > k
        let mut covered: FxHashSet<Elem> = FxHashSet::default();
        for k in (0..span).rev() {
            for a in points(k) {
                for f in &self.sets[k] {
                    if covered.contains(&m.multiply(f, &a)) {
                        return Err(Error::InvalidParam(format!(
                            "piece F_{} {a:?} meets a larger-scale piece",
                            self.scales.0 + k
                        )));
                    }
                }
            }
            for (a, _) in &self.sigma[k] {
                covered.extend(self.sets[k].iter().map(|f| m.multiply(f, a)));
            }
        }
        Ok(())
    }
}

/// Shared, trial-independent part of the construction.
#[derive(Clone, Debug)]
pub struct CoveringPlan {
    scales: (usize, usize),
    sets: Arc<Vec<FiniteRegion>>,
    /// `F_i⁻¹F_N` for `i < N`, keyed by `(i − L, N − L)`.
    blockers: FxHashMap<(usize, usize), FiniteRegion>,
    targets: Vec<FiniteRegion>,
    alphas: Vec<f64>,
    window: Arc<FxHashSet<Elem>>,
    union_targets: FiniteRegion,
    pub tempered_constant: f64,
    pub warnings: Vec<String>,
}

impl CoveringPlan {
    pub fn new(
        seq: &FolnerSeq,
        scales: (usize, usize),
        targets: Vec<FiniteRegion>,
        params: &PoissonParams,
    ) -> Result<Self> {
        params.validate()?;
        let (l, r) = scales;
        if l == 0 || l > r || r > seq.len() {
            return Err(Error::InvalidParam(format!(
                "scales [{l}, {r}] not within 1..={}",
                seq.len()
            )));
        }
        if targets.len() != r + 1 - l {
            return Err(Error::InvalidParam(format!(
                "{} target sets for {} scales",
                targets.len(),
                r + 1 - l
            )));
        }
        let model = seq.model();
        if targets.iter().any(|t| t.model() != model) {
            return Err(Error::ModelMismatch(
                "targets and sequence live on different groups".into(),
            ));
        }
        let sets: Vec<FiniteRegion> = (l..=r).map(|n| seq.set(n)).collect::<Result<_>>()?;
        let sub = seq.subsequence(&(l..=r).collect::<Vec<_>>())?;
        let c_hat = tempered_constant(&sub, sub.len())?;
        let mut warnings = Vec::new();
        if c_hat > params.temper_c {
            warnings.push(format!(
                "scales {l}..={r} have tempered constant {c_hat:.6} > C = {}",
                params.temper_c
            ));
        }
        let mut blockers = FxHashMap::default();
        for i in 0..sets.len() {
            let inv = sets[i].inverse();
            for n in i + 1..sets.len() {
                blockers.insert((i, n), inv.product(&sets[n])?);
            }
        }
        let mut window = FxHashSet::default();
        for (f, t) in sets.iter().zip(&targets) {
            let piece = f.product(t)?;
            window.extend(piece.iter().copied());
            if window.len() > crate::group::SCALE_CAP {
                return Err(Error::ScaleCap {
                    what: "covering window",
                    cap: crate::group::SCALE_CAP,
                });
            }
        }
        let mut union_targets = FiniteRegion::empty(model);
        for t in &targets {
            union_targets = union_targets.union(t)?;
        }
        let alphas = sets.iter().map(|f| params.alpha(f)).collect();
        Ok(CoveringPlan {
            scales,
            sets: Arc::new(sets),
            blockers,
            targets,
            alphas,
            window: Arc::new(window),
            union_targets,
            tempered_constant: c_hat,
            warnings,
        })
    }

    pub fn model(&self) -> GroupModel {
        self.sets[0].model()
    }

    pub fn union_targets(&self) -> &FiniteRegion {
        &self.union_targets
    }

    pub fn window_len(&self) -> usize {
        self.window.len()
    }

    /// Realization driven by `key`; scale `N` reads stream `key.derive(N)`.
    pub fn sample(&self, key: StreamKey) -> CoveringSample {
        let m = self.model();
        let haar = m.haar_weight();
        let span = self.sets.len();
        let mut active: Vec<Vec<Elem>> = self.targets.iter().map(|t| t.elements().to_vec()).collect();
        let mut sigma = vec![Vec::new(); span];
        let mut pools = vec![FiniteRegion::empty(m); span];
        for n in (0..span).rev() {
            let scale_key = key.derive((self.scales.0 + n) as u64);
            let alpha = self.alphas[n];
            let pool = std::mem::take(&mut active[n]);
            let centers: Vec<(Elem, u32)> = if alpha > 0.0 {
                pool.iter()
                    .filter_map(|a| {
                        let k = multiplicity(scale_key, alpha, haar, a);
                        (k > 0).then_some((*a, k))
                    })
                    .collect()
            } else {
                Vec::new()
            };
            if !centers.is_empty() {
                let inv: Vec<Elem> = centers.iter().map(|(a, _)| m.invert(a)).collect();
                for i in 0..n {
                    let blocker = &self.blockers[&(i, n)];
                    active[i].retain(|b| !inv.iter().any(|ai| blocker.contains(&m.multiply(b, ai))));
                }
            }
            pools[n] = FiniteRegion::from_sorted(m, pool);
            sigma[n] = centers;
        }
        CoveringSample {
            scales: self.scales,
            sets: Arc::clone(&self.sets),
            sigma,
            pools,
            window: Arc::clone(&self.window),
        }
    }
}

/// Single realization with the master seed of `params`.
pub fn random_covering(
    seq: &FolnerSeq,
    scales: (usize, usize),
    targets: Vec<FiniteRegion>,
    params: &PoissonParams,
) -> Result<(CoveringSample, Vec<String>)> {
    let plan = CoveringPlan::new(seq, scales, targets, params)?;
    let sample = plan.sample(trial_key(params.seed, 0));
    Ok((sample, plan.warnings))
}

/// Stream for trial `t`: master seed, then trial index, then (inside the
/// plan) scale index.
pub fn trial_key(seed: u64, trial: u64) -> StreamKey {
    StreamKey::new(seed).derive(TRIAL_STREAMS).derive(trial)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub value: Option<f64>,
    pub se: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundCheck {
    pub name: &'static str,
    pub estimate: Estimate,
    /// `"<="` or `">="`.
    pub direction: &'static str,
    pub bound: f64,
    pub slack_se: f64,
    pub pass: bool,
}

impl BoundCheck {
    fn new(name: &'static str, estimate: Estimate, direction: &'static str, bound: f64, slack: f64) -> Self {
        let pass = match (estimate.value, estimate.se) {
            (Some(v), Some(se)) if direction == "<=" => v <= bound + slack * se,
            (Some(v), Some(se)) => v >= bound - slack * se,
            // no mass: conditional moments are vacuous, the coverage bound is not
            (None, _) => direction == "<=" || bound <= 0.0,
            (Some(v), None) if direction == "<=" => v <= bound,
            (Some(v), None) => v >= bound,
        };
        BoundCheck {
            name,
            estimate,
            direction,
            bound,
            slack_se: slack,
            pass,
        }
    }
}

/// Exact expectations for a single-scale covering, where `Λ(g)` is
/// Poisson with mean `α|F⁻¹g ∩ A|`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SingleScalePrediction {
    pub conditional_mean: Option<f64>,
    pub conditional_second: Option<f64>,
    pub integral: f64,
    pub conditional_mean_within_3se: Option<bool>,
    pub conditional_second_within_3se: Option<bool>,
    pub integral_within_3se: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MomentReport {
    pub trials: usize,
    pub scales: (usize, usize),
    pub temper_c: f64,
    pub intensity: f64,
    pub seed: u64,
    pub haar: &'static str,
    pub tempered_constant: f64,
    pub union_target_measure: f64,
    pub window_points: usize,
    pub no_mass: bool,
    pub mean_centers: f64,
    pub checks: Vec<BoundCheck>,
    pub single_scale: Option<SingleScalePrediction>,
    pub warnings: Vec<String>,
    pub pass: bool,
}

impl MomentReport {
    pub fn check(&self, name: &str) -> Option<&BoundCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

#[derive(Clone, Copy, Debug, Default)]
struct TrialStats {
    /// `Σ_g Λ(g)`
    first: f64,
    /// `Σ_g Λ(g)²`
    second: f64,
    /// `#{g : Λ(g) ≥ 1}`
    hit: f64,
    centers: f64,
}

/// Ratio estimator `Σx/Σy` with its delta-method standard error.
fn ratio_estimate(xs: &[f64], ys: &[f64]) -> Estimate {
    let t = xs.len() as f64;
    let sx: NeumaierSum = xs.iter().copied().collect();
    let sy: NeumaierSum = ys.iter().copied().collect();
    if sy.value() <= 0.0 {
        return Estimate { value: None, se: None };
    }
    let r = sx.value() / sy.value();
    let ybar = sy.value() / t;
    let resid: NeumaierSum = xs.iter().zip(ys).map(|(x, y)| (x - r * y).powi(2)).collect();
    let se = (resid.value() / (t * (t - 1.0))).sqrt() / ybar;
    Estimate {
        value: Some(r),
        se: Some(se),
    }
}

fn mean_estimate(xs: &[f64]) -> Estimate {
    let t = xs.len() as f64;
    let s: NeumaierSum = xs.iter().copied().collect();
    let mean = s.value() / t;
    let var: NeumaierSum = xs.iter().map(|x| (x - mean).powi(2)).collect();
    Estimate {
        value: Some(mean),
        se: Some((var.value() / (t - 1.0) / t).sqrt()),
    }
}

pub const MIN_TRIALS: usize = 100;

/// Monte Carlo estimates of `E(Λ | Λ ≥ 1)`, `E(Λ² | Λ ≥ 1)` (pooled over
/// the window) and `E(∫Λ)`, checked against `1 + 1/C`, `(1 + 1/C)²` and
/// `|∪A|/(2C)` with 3-SE slack.
pub fn covering_moments(
    seq: &FolnerSeq,
    scales: (usize, usize),
    targets: Vec<FiniteRegion>,
    params: &PoissonParams,
    trials: usize,
) -> Result<MomentReport> {
    if trials < MIN_TRIALS {
        return Err(Error::InvalidParam(format!(
            "need at least {MIN_TRIALS} trials, got {trials}"
        )));
    }
    let plan = CoveringPlan::new(seq, scales, targets, params)?;
    let haar = plan.model().haar_weight();
    let stats = par::map_range(trials, |t| -> Result<TrialStats> {
        let sample = plan.sample(trial_key(params.seed, t as u64));
        sample.verify_centers()?;
        let lambda = sample.counting_map();
        let mut s = TrialStats {
            centers: sample.total_centers() as f64,
            ..Default::default()
        };
        for &v in lambda.values() {
            let v = v as f64;
            s.first += v;
            s.second += v * v;
            s.hit += 1.0;
        }
        Ok(s)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let first: Vec<f64> = stats.iter().map(|s| s.first).collect();
    let second: Vec<f64> = stats.iter().map(|s| s.second).collect();
    let hit: Vec<f64> = stats.iter().map(|s| s.hit).collect();
    let integral: Vec<f64> = first.iter().map(|x| x * haar).collect();

    let cond_mean = ratio_estimate(&first, &hit);
    let cond_second = ratio_estimate(&second, &hit);
    let int_est = mean_estimate(&integral);
    let no_mass = cond_mean.value.is_none();

    let inv_c = 1.0 / params.temper_c;
    let union_measure = plan.union_targets().measure();
    let checks = vec![
        BoundCheck::new("conditional_mean", cond_mean.clone(), "<=", 1.0 + inv_c, 3.0),
        BoundCheck::new(
            "conditional_second_moment",
            cond_second.clone(),
            "<=",
            (1.0 + inv_c).powi(2),
            3.0,
        ),
        BoundCheck::new("integral", int_est.clone(), ">=", union_measure * inv_c / 2.0, 3.0),
    ];

    let single_scale = (scales.0 == scales.1).then(|| {
        let (mean, second, integral) = single_scale_oracle(&plan);
        let within = |e: &Estimate, want: Option<f64>| match (e.value, e.se, want) {
            (Some(v), Some(se), Some(w)) => Some((v - w).abs() <= 3.0 * se),
            _ => None,
        };
        SingleScalePrediction {
            conditional_mean_within_3se: within(&cond_mean, mean),
            conditional_second_within_3se: within(&cond_second, second),
            integral_within_3se: within(&int_est, Some(integral)),
            conditional_mean: mean,
            conditional_second: second,
            integral,
        }
    });

    let mean_centers = stats.iter().map(|s| s.centers).collect::<NeumaierSum>().value() / trials as f64;
    let mut warnings = plan.warnings.clone();
    if no_mass {
        warnings.push("no mass: no point was covered in any trial".into());
    }
    let pass = checks.iter().all(|c| c.pass);
    Ok(MomentReport {
        trials,
        scales,
        temper_c: params.temper_c,
        intensity: params.intensity,
        seed: params.seed,
        haar: "right Haar measure = counting measure × point mass (all models unimodular)",
        tempered_constant: plan.tempered_constant,
        union_target_measure: union_measure,
        window_points: plan.window_len(),
        no_mass,
        mean_centers,
        checks,
        single_scale,
        warnings,
        pass,
    })
}

fn single_scale_oracle(plan: &CoveringPlan) -> (Option<f64>, Option<f64>, f64) {
    let m = plan.model();
    let haar = m.haar_weight();
    let f = &plan.sets[0];
    let target = &plan.targets[0];
    let lam_unit = plan.alphas[0] * haar;
    let mut reach: FxHashMap<Elem, u64> = FxHashMap::default();
    for a in target {
        for x in f {
            *reach.entry(m.multiply(x, a)).or_insert(0) += 1;
        }
    }
    let (mut s1, mut s2, mut p) = (NeumaierSum::new(), NeumaierSum::new(), NeumaierSum::new());
    for &count in reach.values() {
        let lam = lam_unit * count as f64;
        s1.add(lam);
        s2.add(lam + lam * lam);
        p.add(-(-lam).exp_m1());
    }
    let integral = s1.value() * haar;
    if p.value() <= 0.0 {
        return (None, None, integral);
    }
    (Some(s1.value() / p.value()), Some(s2.value() / p.value()), integral)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::folner::SeqKind;

    const Z: GroupModel = GroupModel::IntLine;

    fn z(lo: i64, hi: i64) -> FiniteRegion {
        FiniteRegion::interval(Z, lo, hi).unwrap()
    }

    #[test]
    fn zero_intensity_is_empty() {
        assert!(sample_poisson(&z(0, 1000), 0.0, 1).unwrap().is_empty());
    }

    #[test]
    fn inversion_matches_pmf() {
        // P(X = k) recovered from the fraction of the unit interval mapped to k
        let lam = 2.5f64;
        let n = 200_000u64;
        let mut counts = [0u64; 8];
        for i in 0..n {
            let bits = ((i as f64 + 0.5) / n as f64 * (1u64 << 53) as f64) as u64;
            let k = poisson_from_bits(lam, bits << 11) as usize;
            if k < 8 {
                counts[k] += 1;
            }
        }
        let mut fact = 1.0;
        for (k, &c) in counts.iter().enumerate() {
            if k > 0 {
                fact *= k as f64;
            }
            let pmf = (-lam).exp() * lam.powi(k as i32) / fact;
            assert!((c as f64 / n as f64 - pmf).abs() < 1e-4, "k={k}");
        }
    }

    #[test]
    fn large_mean_branch_is_plausible() {
        let key = StreamKey::new(3);
        let draws: Vec<f64> = (0..20_000)
            .map(|i| poisson_from_bits(100.0, key.bits(i)) as f64)
            .collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        assert!((mean - 100.0).abs() < 0.3, "{mean}");
    }

    fn two_scale_seq() -> FolnerSeq {
        FolnerSeq::user(Z, vec![z(0, 2), z(0, 4)]).unwrap()
    }

    #[test]
    fn two_scale_recursion_by_hand() {
        let seq = two_scale_seq();
        let t1 = parse_region(Z, "0,1,2,3,5,8,9,13,17,19").unwrap();
        let t2 = parse_region(Z, "1,2,4,6,7,10,11,15").unwrap();
        let params = PoissonParams::new(2.0, 5).unwrap().with_intensity(1.5).unwrap();
        let plan = CoveringPlan::new(&seq, (1, 2), vec![t1.clone(), t2.clone()], &params).unwrap();
        for trial in 0..50 {
            let key = trial_key(5, trial);
            let s = plan.sample(key);
            // straight-line replay
            let k2 = key.derive(2);
            let sigma2: Vec<(i64, u32)> = t2
                .iter()
                .map(|a| (a.x(), poisson_from_bits(1.5 / 4.0, k2.bits_at(a))))
                .filter(|&(_, m)| m > 0)
                .collect();
            let mut covered = std::collections::BTreeSet::new();
            for &(a, _) in &sigma2 {
                for f in 0..4 {
                    covered.insert(a + f);
                }
            }
            let pool1: Vec<i64> = t1
                .iter()
                .map(|e| e.x())
                .filter(|b| !(0..2).any(|f| covered.contains(&(b + f))))
                .collect();
            let k1 = key.derive(1);
            let sigma1: Vec<(i64, u32)> = pool1
                .iter()
                .map(|&a| (a, poisson_from_bits(1.5 / 2.0, k1.bits_at(&Elem::int(a)))))
                .filter(|&(_, m)| m > 0)
                .collect();
            let got2: Vec<(i64, u32)> = s.centers(2).iter().map(|(a, m)| (a.x(), *m)).collect();
            let got1: Vec<(i64, u32)> = s.centers(1).iter().map(|(a, m)| (a.x(), *m)).collect();
            assert_eq!(got2, sigma2);
            assert_eq!(got1, sigma1);
            assert_eq!(s.pool(1).iter().map(|e| e.x()).collect::<Vec<_>>(), pool1);
            s.verify_structure().unwrap();
        }
    }

    #[test]
    fn single_scale_uses_whole_target() {
        let seq = two_scale_seq();
        let t = parse_region(Z, "0,3,4,9").unwrap();
        let params = PoissonParams::new(2.0, 1).unwrap().with_intensity(4.0).unwrap();
        let (s, _) = random_covering(&seq, (2, 2), vec![t.clone()], &params).unwrap();
        assert_eq!(s.pool(2), &t);
        let key = trial_key(1, 0).derive(2);
        for a in &t {
            let m = poisson_from_bits(1.0, key.bits_at(a));
            let got = s.centers(2).iter().find(|(c, _)| c == a).map(|(_, m)| *m).unwrap_or(0);
            assert_eq!(got, m);
        }
    }

    #[test]
    fn counting_function_cases() {
        let seq = two_scale_seq();
        let params = PoissonParams::new(2.0, 1).unwrap().with_intensity(0.0).unwrap();
        let t = parse_region(Z, "0,5").unwrap();
        let (empty, _) = random_covering(&seq, (1, 2), vec![t.clone(), t.clone()], &params).unwrap();
        assert_eq!(empty.counting_function(&Elem::int(5)).unwrap(), 0);
        assert!(empty.counting_function(&Elem::int(100)).is_err());

        let mut s = empty.clone();
        s.sigma[1] = vec![(Elem::int(5), 2)];
        for g in 5..9 {
            assert_eq!(s.counting_function(&Elem::int(g)).unwrap(), 2);
        }
        assert_eq!(s.counting_function(&Elem::int(3)).unwrap(), 0);
        assert_eq!(s.counting_map().values().sum::<u64>(), 8);
    }

    #[test]
    fn sampling_is_deterministic() {
        let seq = FolnerSeq::new(Z, SeqKind::Pow2, 6).unwrap();
        let targets = parse_targets(Z, "random:density=0.3,window=1000,seed=11", (1, 6)).unwrap();
        let params = PoissonParams::new(2.0, 7).unwrap();
        let (a, w) = random_covering(&seq, (1, 6), targets.clone(), &params).unwrap();
        let (b, _) = random_covering(&seq, (1, 6), targets, &params).unwrap();
        assert!(w.is_empty());
        for n in 1..=6 {
            assert_eq!(a.centers(n), b.centers(n));
        }
        a.verify_structure().unwrap();
    }

    #[test]
    fn untempered_scales_warn() {
        let seq = FolnerSeq::new(Z, SeqKind::Drifting, 6).unwrap();
        let targets = parse_targets(Z, "set:0..50", (1, 6)).unwrap();
        let params = PoissonParams::new(2.0, 7).unwrap();
        let (_, w) = random_covering(&seq, (1, 6), targets, &params).unwrap();
        assert_eq!(w.len(), 1);
    }

    #[test]
    fn too_few_trials_rejected() {
        let seq = two_scale_seq();
        let params = PoissonParams::new(2.0, 1).unwrap();
        let t = parse_region(Z, "0").unwrap();
        assert!(covering_moments(&seq, (1, 1), vec![t], &params, 10).is_err());
    }

    #[test]
    fn zero_intensity_reports_no_mass() {
        let seq = two_scale_seq();
        let params = PoissonParams::new(2.0, 1).unwrap().with_intensity(0.0).unwrap();
        let t = parse_region(Z, "0,4").unwrap();
        let rep = covering_moments(&seq, (1, 2), vec![t.clone(), t], &params, 100).unwrap();
        assert!(rep.no_mass);
        assert_eq!(rep.check("integral").unwrap().estimate.value, Some(0.0));
        assert_eq!(rep.mean_centers, 0.0);
    }

    #[test]
    fn heisenberg_covering_is_well_formed() {
        let h = GroupModel::Heisenberg;
        let seq = FolnerSeq::new(h, SeqKind::HeisenbergBox, 3).unwrap();
        let targets = parse_targets(h, "random:density=0.2,window=6,seed=2", (1, 3)).unwrap();
        let params = PoissonParams::new(3.0, 4).unwrap().with_intensity(2.0).unwrap();
        let plan = CoveringPlan::new(&seq, (1, 3), targets, &params).unwrap();
        for t in 0..10 {
            plan.sample(trial_key(4, t)).verify_structure().unwrap();
        }
    }
}
