//! Configured end-to-end experiments with deterministic JSON reports.
//!
//! A config is a JSON object with `schema_version`, `experiment`, a
//! mandatory `seed`, and experiment-specific fields; every omitted field
//! takes its value from the versioned defaults table, and the report echoes
//! the fully resolved config.

use std::collections::BTreeMap;
use std::fmt;

use num_complex::Complex64;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::covering::{covering_moments, parse_targets, MomentReport, PoissonParams};
use crate::dynamics::{kronecker_project, Observable, Point, PointSpec, SystemModel, WeightSpec};
use crate::error::{Error, Result};
use crate::folner::{inner_boundary_len, k_boundary_len, tempered_constant, FolnerSeq, SeqKind, SeqSpec};
use crate::group::{Elem, FiniteRegion, GroupModel};
use crate::par;
use crate::rng::StreamKey;
use crate::sum::NeumaierSum;
use crate::torus::Phase;
use crate::weights::{check_perp, max_abs_correlations, PerpParams, PerpVerdict, WeightFn};

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULTS_VERSION: u32 = 1;

/// Versioned defaults. Convergence tolerances sit at a few multiples of the
/// `N^{-1/2}` fluctuation scale of the default horizons.
pub mod defaults {
    pub const ORTH_TOL: f64 = 0.02;
    pub const ORTH_DECAY_SLACK: f64 = 0.01;
    pub const RETURN_TIMES_TOL: f64 = 0.01;
    pub const WW_STABILITY_TOL: f64 = 0.01;
    pub const WW_EXACT_TOL: f64 = 1e-3;
    pub const WW_RANDOM_TOL: f64 = 0.02;
    pub const COVER_SLACK_SE: f64 = 3.0;
    pub const LEMMA_OBSERVED_TOL: f64 = 0.1;
    pub const PERP_HORIZON: usize = 100_000;
    pub const PERP_DELTAS: [f64; 3] = [0.2, 0.1, 0.05];
    pub const SAMPLES: usize = 20;
    pub const N_MAX: usize = 1_000_000;
    pub const LADDER_MIN: usize = 10_000;
    pub const ROTATION_THETA: f64 = std::f64::consts::SQRT_2 - 1.0;
    pub const SECOND_THETA: f64 = std::f64::consts::FRAC_1_PI;
    pub const COVER_TRIALS: usize = 10_000;
    pub const LEMMA_EPS: f64 = 0.2;
    pub const LEMMA_C: f64 = 2.0;
    pub const LEMMA_L_START: usize = 16;
    pub const LEMMA_HORIZON: usize = 1 << 16;
    /// Phases closer than this are treated as equal in closed-form limits.
    pub const PHASE_MATCH: f64 = 1e-9;
}

const X_STREAM: u64 = 0x78;
const Y_STREAM: u64 = 0x79;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum XMode {
    /// Base point of orbit weights drawn per sample from the invariant measure.
    Sampled,
    /// Base point exactly as written in the weight spec.
    Fixed,
}

fn rotation_system() -> String {
    format!("rotation:theta={}", defaults::ROTATION_THETA)
}

mod dflt {
    use super::*;
    pub fn bernoulli_orbit() -> String {
        "orbit:bernoulli:seed=7".into()
    }
    pub fn rotation() -> String {
        rotation_system()
    }
    pub fn cos() -> String {
        "cos".into()
    }
    pub fn samples() -> usize {
        defaults::SAMPLES
    }
    pub fn n_max() -> usize {
        defaults::N_MAX
    }
    pub fn ladder_min() -> usize {
        defaults::LADDER_MIN
    }
    pub fn sampled() -> XMode {
        XMode::Sampled
    }
    pub fn fixed() -> XMode {
        XMode::Fixed
    }
    pub fn orth_tol() -> f64 {
        defaults::ORTH_TOL
    }
    pub fn decay_slack() -> f64 {
        defaults::ORTH_DECAY_SLACK
    }
    pub fn rt_tol() -> f64 {
        defaults::RETURN_TIMES_TOL
    }
    pub fn perp_horizon() -> usize {
        defaults::PERP_HORIZON
    }
    pub fn perp_deltas() -> Vec<f64> {
        defaults::PERP_DELTAS.to_vec()
    }
    pub fn yes() -> bool {
        true
    }
    pub fn ww_weight() -> String {
        format!("orbit:rotation:theta={},obs=cos,x=0", defaults::ROTATION_THETA)
    }
    pub fn ww_characters() -> Vec<f64> {
        vec![0.0, defaults::ROTATION_THETA, defaults::SECOND_THETA, 0.25]
    }
    pub fn ww_stability() -> f64 {
        defaults::WW_STABILITY_TOL
    }
    pub fn ww_exact() -> f64 {
        defaults::WW_EXACT_TOL
    }
    pub fn ww_random() -> f64 {
        defaults::WW_RANDOM_TOL
    }
    pub fn model_z() -> String {
        "Z".into()
    }
    pub fn pow2_seq() -> String {
        "pow2:1..6".into()
    }
    pub fn c2() -> f64 {
        2.0
    }
    pub fn targets() -> String {
        "random:density=0.3,window=1000,seed=11".into()
    }
    pub fn trials() -> usize {
        defaults::COVER_TRIALS
    }
    pub fn lemma_eps() -> f64 {
        defaults::LEMMA_EPS
    }
    pub fn lemma_c() -> f64 {
        defaults::LEMMA_C
    }
    pub fn l_start() -> usize {
        defaults::LEMMA_L_START
    }
    pub fn lemma_horizon() -> usize {
        defaults::LEMMA_HORIZON
    }
    pub fn family() -> Vec<String> {
        vec![
            "orbit:bernoulli:seed=101".into(),
            "orbit:bernoulli:seed=202".into(),
            format!("cos:theta={}", defaults::SECOND_THETA),
            "self".into(),
        ]
    }
    pub fn observed_tol() -> f64 {
        defaults::LEMMA_OBSERVED_TOL
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrthogonalityConfig {
    #[serde(default = "dflt::bernoulli_orbit")]
    pub weight: String,
    #[serde(default = "dflt::rotation")]
    pub system: String,
    #[serde(default = "dflt::cos")]
    pub obs: String,
    #[serde(default = "dflt::samples")]
    pub samples: usize,
    #[serde(default = "dflt::n_max")]
    pub n_max: usize,
    #[serde(default = "dflt::ladder_min")]
    pub ladder_min: usize,
    #[serde(default = "dflt::sampled")]
    pub x_mode: XMode,
    /// Fixed target point (`0.3`, or `0.1/0.7` for a skew product).
    #[serde(default)]
    pub y: Option<String>,
    #[serde(default = "dflt::orth_tol")]
    pub tolerance: f64,
    #[serde(default = "dflt::decay_slack")]
    pub decay_slack: f64,
    #[serde(default = "dflt::perp_horizon")]
    pub perp_horizon: usize,
    #[serde(default = "dflt::perp_deltas")]
    pub perp_deltas: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReturnTimesConfig {
    #[serde(default = "dflt::bernoulli_orbit")]
    pub weight: String,
    #[serde(default = "dflt::rotation")]
    pub system: String,
    #[serde(default = "dflt::cos")]
    pub obs: String,
    #[serde(default = "dflt::samples")]
    pub samples: usize,
    #[serde(default = "dflt::n_max")]
    pub n_max: usize,
    #[serde(default = "dflt::ladder_min")]
    pub ladder_min: usize,
    #[serde(default = "dflt::sampled")]
    pub x_mode: XMode,
    #[serde(default)]
    pub y: Option<String>,
    #[serde(default = "dflt::rt_tol")]
    pub tolerance: f64,
    /// Also run the constant-weight control (plain ergodic averages).
    #[serde(default = "dflt::yes")]
    pub control: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WienerWintnerConfig {
    #[serde(default = "dflt::ww_weight")]
    pub weight: String,
    #[serde(default = "dflt::ww_characters")]
    pub characters: Vec<f64>,
    #[serde(default = "dflt::n_max")]
    pub n_max: usize,
    #[serde(default = "dflt::ladder_min")]
    pub ladder_min: usize,
    #[serde(default = "dflt::fixed")]
    pub x_mode: XMode,
    #[serde(default = "dflt::ww_stability")]
    pub stability_tolerance: f64,
    #[serde(default = "dflt::ww_exact")]
    pub exact_tolerance: f64,
    #[serde(default = "dflt::ww_random")]
    pub random_tolerance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoveringConfig {
    #[serde(default = "dflt::model_z")]
    pub model: String,
    /// Generator with the scale range `[L, R]`, e.g. `pow2:1..6`.
    #[serde(default = "dflt::pow2_seq")]
    pub seq: String,
    #[serde(default = "dflt::c2")]
    pub c: f64,
    /// `κ` in `α_N = κ/|F_N|`; `1/C` when absent.
    #[serde(default)]
    pub intensity: Option<f64>,
    #[serde(default = "dflt::targets")]
    pub targets: String,
    #[serde(default = "dflt::trials")]
    pub trials: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrthLemmaConfig {
    #[serde(default = "dflt::bernoulli_orbit")]
    pub weight: String,
    /// Number of intervals; `⌊25C²ε⁻⁴⌋ + 1` when absent.
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default = "dflt::lemma_eps")]
    pub eps: f64,
    /// Temperedness constant of the interval family.
    #[serde(default = "dflt::lemma_c")]
    pub c: f64,
    /// `ε⁴/(100K)` when absent.
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default = "dflt::l_start")]
    pub l_start: usize,
    /// Largest admissible `R_K`.
    #[serde(default = "dflt::lemma_horizon")]
    pub horizon: usize,
    /// `I = F_{i_scale}`; the horizon when absent.
    #[serde(default)]
    pub i_scale: Option<usize>,
    /// Test functions `f`: weight specs, or `self` for `f = c`.
    #[serde(default = "dflt::family")]
    pub family: Vec<String>,
    #[serde(default = "dflt::observed_tol")]
    pub observed_tolerance: f64,
    #[serde(default = "dflt::perp_horizon")]
    pub perp_horizon: usize,
    #[serde(default = "dflt::perp_deltas")]
    pub perp_deltas: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ExperimentSpec {
    ReturnTimes(ReturnTimesConfig),
    WienerWintner(WienerWintnerConfig),
    Orthogonality(OrthogonalityConfig),
    CoveringVerify(CoveringConfig),
    OrthLemmaBound(OrthLemmaConfig),
}

impl ExperimentSpec {
    pub fn id(&self) -> &'static str {
        match self {
            ExperimentSpec::ReturnTimes(_) => "return-times",
            ExperimentSpec::WienerWintner(_) => "wiener-wintner",
            ExperimentSpec::Orthogonality(_) => "orthogonality",
            ExperimentSpec::CoveringVerify(_) => "covering-verify",
            ExperimentSpec::OrthLemmaBound(_) => "orth-lemma-bound",
        }
    }
}

pub const EXPERIMENT_IDS: [&str; 5] = [
    "return-times",
    "wiener-wintner",
    "orthogonality",
    "covering-verify",
    "orth-lemma-bound",
];

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub spec: ExperimentSpec,
}

fn take_fields<T: DeserializeOwned>(rest: serde_json::Map<String, Value>) -> Result<T> {
    Ok(serde_json::from_value(Value::Object(rest))?)
}

impl ExperimentConfig {
    /// Parse a config; `expected` (from the command line) must agree with
    /// the `experiment` field when both are present, and `seed` overrides
    /// the file's seed.
    pub fn from_json(text: &str, expected: Option<&str>, seed: Option<u64>) -> Result<Self> {
        let v: Value = serde_json::from_str(text)?;
        let Value::Object(mut map) = v else {
            return Err(Error::InvalidParam("config must be a JSON object".into()));
        };
        let version = match map.remove("schema_version") {
            Some(v) => v
                .as_u64()
                .ok_or_else(|| Error::InvalidParam("schema_version must be an integer".into()))?
                as u32,
            None => SCHEMA_VERSION,
        };
        if version != SCHEMA_VERSION {
            return Err(Error::InvalidParam(format!(
                "unsupported schema_version {version}, expected {SCHEMA_VERSION}"
            )));
        }
        let id = match (map.remove("experiment"), expected) {
            (Some(Value::String(s)), Some(e)) if s != e => {
                return Err(Error::InvalidParam(format!("config is for {s}, not {e}")));
            }
            (Some(Value::String(s)), _) => s,
            (None, Some(e)) => e.to_string(),
            (Some(_), _) => return Err(Error::InvalidParam("experiment must be a string".into())),
            (None, None) => return Err(Error::InvalidParam("config names no experiment".into())),
        };
        let file_seed = match map.remove("seed") {
            Some(v) => Some(
                v.as_u64()
                    .ok_or_else(|| Error::InvalidParam("seed must be a nonnegative integer".into()))?,
            ),
            None => None,
        };
        let seed = seed
            .or(file_seed)
            .ok_or_else(|| Error::InvalidParam("a seed is mandatory (config field or --seed)".into()))?;
        let spec = match id.as_str() {
            "return-times" => ExperimentSpec::ReturnTimes(take_fields(map)?),
            "wiener-wintner" => ExperimentSpec::WienerWintner(take_fields(map)?),
            "orthogonality" => ExperimentSpec::Orthogonality(take_fields(map)?),
            "covering-verify" => ExperimentSpec::CoveringVerify(take_fields(map)?),
            "orth-lemma-bound" => ExperimentSpec::OrthLemmaBound(take_fields(map)?),
            other => return Err(Error::InvalidParam(format!("unknown experiment {other}"))),
        };
        Ok(ExperimentConfig {
            schema_version: version,
            seed,
            spec,
        })
    }

    /// The resolved config, defaults filled in.
    pub fn to_value(&self) -> Value {
        let fields = match &self.spec {
            ExperimentSpec::ReturnTimes(c) => serde_json::to_value(c),
            ExperimentSpec::WienerWintner(c) => serde_json::to_value(c),
            ExperimentSpec::Orthogonality(c) => serde_json::to_value(c),
            ExperimentSpec::CoveringVerify(c) => serde_json::to_value(c),
            ExperimentSpec::OrthLemmaBound(c) => serde_json::to_value(c),
        }
        .expect("configs serialize");
        let mut map = match fields {
            Value::Object(m) => m,
            _ => unreachable!("configs are structs"),
        };
        map.insert("schema_version".into(), json!(self.schema_version));
        map.insert("experiment".into(), json!(self.spec.id()));
        map.insert("seed".into(), json!(self.seed));
        Value::Object(map)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Pass,
    Fail,
    HypothesisNotMet,
    Unconstructible,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Pass => 0,
            Status::Fail => 1,
            Status::HypothesisNotMet | Status::Unconstructible => 3,
        }
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Status::Pass => "pass",
            Status::Fail => "fail",
            Status::HypothesisNotMet => "hypothesis-not-met",
            Status::Unconstructible => "unconstructible",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub observed: Option<f64>,
    /// `"<="`, `"<"` or `">="`.
    pub relation: &'static str,
    pub threshold: f64,
    pub pass: bool,
}

impl Check {
    fn new(name: impl Into<String>, observed: f64, relation: &'static str, threshold: f64) -> Self {
        let pass = match relation {
            "<=" => observed <= threshold,
            "<" => observed < threshold,
            ">=" => observed >= threshold,
            _ => unreachable!("known relation"),
        };
        Check {
            name: name.into(),
            observed: Some(observed),
            relation,
            threshold,
            pass,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Verdict {
    pub status: Status,
    pub exit_code: i32,
    pub checks: Vec<Check>,
    pub notes: Vec<String>,
}

impl Verdict {
    fn from_checks(checks: Vec<Check>, hypothesis_met: bool, constructible: bool, notes: Vec<String>) -> Self {
        let status = if !constructible {
            Status::Unconstructible
        } else if !hypothesis_met {
            Status::HypothesisNotMet
        } else if checks.iter().all(|c| c.pass) {
            Status::Pass
        } else {
            Status::Fail
        };
        Verdict {
            status,
            exit_code: status.exit_code(),
            checks,
            notes,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Stage {
    pub name: &'static str,
    pub metrics: Value,
}

/// Plot-ready table written next to the JSON report.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvTable {
    pub name: String,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn render(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.join(","));
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub tool_version: &'static str,
    pub schema_version: u32,
    pub defaults_version: u32,
    pub experiment: &'static str,
    pub seed: u64,
    pub config: Value,
    pub tolerances: BTreeMap<&'static str, f64>,
    pub stages: Vec<Stage>,
    pub verdict: Verdict,
    #[serde(skip)]
    pub tables: Vec<CsvTable>,
}

impl ExperimentReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }

    pub fn stage(&self, name: &str) -> Option<&Value> {
        self.stages.iter().find(|s| s.name == name).map(|s| &s.metrics)
    }
}

pub fn run(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let seed = config.seed;
    let (tolerances, stages, verdict, tables) = match &config.spec {
        ExperimentSpec::Orthogonality(c) => run_orthogonality(c, seed)?,
        ExperimentSpec::ReturnTimes(c) => run_return_times(c, seed)?,
        ExperimentSpec::WienerWintner(c) => run_wiener_wintner(c, seed)?,
        ExperimentSpec::CoveringVerify(c) => run_covering_verification(c, seed)?,
        ExperimentSpec::OrthLemmaBound(c) => run_orth_lemma_bound(c, seed)?,
    };
    Ok(ExperimentReport {
        tool_version: env!("CARGO_PKG_VERSION"),
        schema_version: config.schema_version,
        defaults_version: DEFAULTS_VERSION,
        experiment: config.spec.id(),
        seed,
        config: config.to_value(),
        tolerances,
        stages,
        verdict,
        tables,
    })
}

type Outcome = (BTreeMap<&'static str, f64>, Vec<Stage>, Verdict, Vec<CsvTable>);

// ---------------------------------------------------------------- helpers

/// `top, top/2, top/4, …` down to `min`, ascending.
pub fn ladder_down(top: usize, min: usize) -> Vec<usize> {
    let mut v = vec![top];
    let mut n = top;
    while n / 2 >= min.max(1) && n / 2 > 0 {
        n /= 2;
        v.push(n);
    }
    v.reverse();
    v
}

fn averaging_seq(group: GroupModel, len: usize) -> Result<FolnerSeq> {
    match group {
        GroupModel::IntLine => FolnerSeq::new(group, SeqKind::Interval, len),
        GroupModel::IntGrid { .. } => FolnerSeq::new(group, SeqKind::Cube, len),
        other => Err(Error::Unsupported(format!(
            "dynamical experiments act by ℤ or ℤᵈ, not {other}"
        ))),
    }
}

/// Means of `term` over `F_N` for every `N` on the ladder.
fn ladder_means<F>(seq: &FolnerSeq, ladder: &[usize], term: F) -> Result<Vec<f64>>
where
    F: Fn(&Elem) -> f64 + Sync + Send,
{
    let prefix = seq.model() == GroupModel::IntLine && matches!(seq.kind(), SeqKind::Interval);
    let mut out = Vec::with_capacity(ladder.len());
    if prefix {
        let mut total = NeumaierSum::new();
        let mut done = 0usize;
        for &n in ladder {
            let seg = par::sum_range(n - done, |i| term(&Elem::int((done + i) as i64)));
            total.add(seg);
            done = n;
            out.push(total.value() / n as f64);
        }
    } else {
        for &n in ladder {
            let f = seq.set(n)?;
            let els = f.elements();
            out.push(par::sum_range(els.len(), |i| term(&els[i])) / els.len() as f64);
        }
    }
    Ok(out)
}

fn parse_point(sys: &SystemModel, s: &str, seed: u64) -> Result<Point> {
    let coords = s
        .split('/')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::parse("point", s, "not a number"))
        })
        .collect::<Result<Vec<_>>>()?;
    sys.point_from_coords(&coords, seed)
}

/// Base point of an orbit weight for sample `i`.
fn weight_point(spec: &WeightSpec, mode: XMode, seed: u64, i: usize) -> Result<Option<Point>> {
    let WeightSpec::Orbit { system, point, .. } = spec else {
        return Ok(None);
    };
    Ok(Some(match mode {
        XMode::Sampled => system.sample_point(StreamKey::new(seed).derive(X_STREAM).derive(i as u64)),
        XMode::Fixed => point.resolve(system)?,
    }))
}

fn build_weight(spec: &WeightSpec, x: Option<&Point>, window: FiniteRegion) -> Result<WeightFn> {
    match (spec, x) {
        (WeightSpec::Orbit { system, obs, .. }, Some(x)) => crate::dynamics::orbit_weight(system, obs, x, window),
        _ => spec.build(window),
    }
}

fn target_point(sys: &SystemModel, y: Option<&str>, seed: u64, i: usize) -> Result<Point> {
    match y {
        Some(s) => parse_point(sys, s, seed),
        None => Ok(sys.sample_point(StreamKey::new(seed).derive(Y_STREAM).derive(i as u64))),
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("metrics serialize")
}

fn kronecker_metrics(spec: &WeightSpec) -> Value {
    match spec {
        WeightSpec::Orbit { system, obs, .. } => match kronecker_project(system, obs) {
            Ok((kr, perp)) => json!({
                "kronecker_part": kr.to_string(),
                "orthogonal_part": perp.to_string(),
                "orthogonal_to_kronecker": kr == Observable::Const(0.0),
            }),
            Err(e) => json!({ "error": e.to_string() }),
        },
        _ => json!({ "note": "not an orbit weight" }),
    }
}

fn perp_summary(v: &PerpVerdict) -> Value {
    let deltas: Vec<Value> = v
        .deltas
        .iter()
        .map(|d| {
            json!({
                "delta": d.delta,
                "passed": d.passed,
                "n_delta": d.n_delta,
                "worst_density": d.worst_density,
                "witness": d.witness,
                "rungs": d.rungs,
            })
        })
        .collect();
    json!({ "passed": v.passed, "pair_rule": v.pair_rule, "params": v.params, "deltas": deltas })
}

struct Scenario {
    weight: WeightSpec,
    system: SystemModel,
    obs: Observable,
}

impl Scenario {
    fn parse(weight: &str, system: &str, obs: &str) -> Result<Self> {
        let weight: WeightSpec = weight.parse()?;
        let system: SystemModel = system.parse()?;
        let obs: Observable = obs.parse()?;
        if !system.supports(&obs) {
            return Err(Error::InvalidParam(format!(
                "observable {obs} is not defined on {system}"
            )));
        }
        if let WeightSpec::Orbit { system: ws, .. } = &weight {
            if ws.group() != system.group() {
                return Err(Error::ModelMismatch(format!(
                    "weight system acted on by {}, target by {}",
                    ws.group(),
                    system.group()
                )));
            }
        }
        Ok(Scenario { weight, system, obs })
    }
}

struct SampleRun {
    averages: Vec<f64>,
    control: Option<Vec<f64>>,
}

#[allow(clippy::too_many_arguments)]
fn run_samples(
    sc: &Scenario,
    seq: &FolnerSeq,
    ladder: &[usize],
    samples: usize,
    mode: XMode,
    y: Option<&str>,
    seed: u64,
    control: bool,
) -> Result<Vec<SampleRun>> {
    let top = *ladder.last().expect("nonempty ladder");
    let window = seq.set(top)?;
    par::map_range(samples, |i| -> Result<SampleRun> {
        let x = weight_point(&sc.weight, mode, seed, i)?;
        let c = build_weight(&sc.weight, x.as_ref(), window.clone())?;
        let y = target_point(&sc.system, y, seed, i)?;
        let g = sc.system.orbit_fn(&sc.obs, &y)?;
        let averages = ladder_means(seq, ladder, |e| c.value(e).unwrap_or(0.0) * g(e))?;
        let control = if control {
            Some(ladder_means(seq, ladder, &g)?)
        } else {
            None
        };
        Ok(SampleRun { averages, control })
    })
    .into_iter()
    .collect()
}

fn ladder_table(name: &str, ladder: &[usize], runs: &[SampleRun], control: bool) -> CsvTable {
    let mut rows = Vec::new();
    for (i, r) in runs.iter().enumerate() {
        for (k, &n) in ladder.iter().enumerate() {
            let mut row = vec![i.to_string(), n.to_string(), format!("{}", r.averages[k])];
            if control {
                row.push(r.control.as_ref().map_or(String::new(), |c| format!("{}", c[k])));
            }
            rows.push(row);
        }
    }
    let mut header = vec!["sample", "N", "average"];
    if control {
        header.push("control_average");
    }
    CsvTable {
        name: name.into(),
        header,
        rows,
    }
}

fn check_window(n_max: usize, ladder_min: usize, samples: usize) -> Result<()> {
    if n_max < 2 || ladder_min == 0 || ladder_min > n_max {
        return Err(Error::InvalidParam(format!(
            "need 1 ≤ ladder_min ≤ n_max and n_max ≥ 2, got {ladder_min}, {n_max}"
        )));
    }
    if samples == 0 {
        return Err(Error::InvalidParam("samples must be positive".into()));
    }
    Ok(())
}

/// `check_perp` on `c` over `[0, horizon)` in ℤ.
fn perp_hypothesis(
    weight: &WeightSpec,
    x: Option<&Point>,
    horizon: usize,
    deltas: &[f64],
) -> Result<Option<PerpVerdict>> {
    let group = match weight {
        WeightSpec::Orbit { system, .. } => system.group(),
        _ => GroupModel::IntLine,
    };
    if group != GroupModel::IntLine {
        return Ok(None);
    }
    let params = PerpParams::for_horizon(horizon, deltas)?;
    let seq = FolnerSeq::new(GroupModel::IntLine, SeqKind::Interval, horizon)?;
    let c = build_weight(
        weight,
        x,
        FiniteRegion::interval(GroupModel::IntLine, 0, horizon as i64)?,
    )?;
    Ok(Some(check_perp(&c, &seq, &params)?))
}

// ----------------------------------------------------------- experiments

pub fn run_orthogonality(cfg: &OrthogonalityConfig, seed: u64) -> Result<Outcome> {
    check_window(cfg.n_max, cfg.ladder_min, cfg.samples)?;
    let sc = Scenario::parse(&cfg.weight, &cfg.system, &cfg.obs)?;
    let group = sc.system.group();
    let seq = averaging_seq(group, cfg.n_max)?;
    let ladder = ladder_down(cfg.n_max, cfg.ladder_min);

    let x0 = weight_point(&sc.weight, cfg.x_mode, seed, 0)?;
    let perp = perp_hypothesis(&sc.weight, x0.as_ref(), cfg.perp_horizon, &cfg.perp_deltas)?;
    let c_hat = tempered_constant(
        &seq,
        cfg.n_max.min(if group == GroupModel::IntLine { 1000 } else { 16 }),
    )?;
    let mut notes = Vec::new();
    let hypothesis_met = match &perp {
        Some(v) => v.passed,
        None => {
            notes.push("orthogonality condition not checked for multi-dimensional weights".into());
            false
        }
    };
    if !hypothesis_met {
        notes.push("weight does not pass the finite-horizon orthogonality check; averages reported anyway".into());
    }

    let runs = run_samples(
        &sc,
        &seq,
        &ladder,
        cfg.samples,
        cfg.x_mode,
        cfg.y.as_deref(),
        seed,
        false,
    )?;
    let finals: Vec<f64> = runs
        .iter()
        .map(|r| r.averages.last().copied().unwrap_or(0.0).abs())
        .collect();
    let firsts: Vec<f64> = runs.iter().map(|r| r.averages[0].abs()).collect();
    let max_final = finals.iter().copied().fold(0.0, f64::max);
    let max_growth = finals
        .iter()
        .zip(&firsts)
        .map(|(f, s)| f - s)
        .fold(f64::NEG_INFINITY, f64::max);

    let checks = vec![
        Check::new(
            format!("max |average| at N={}", cfg.n_max),
            max_final,
            "<=",
            cfg.tolerance,
        ),
        Check::new(
            format!("max (|average(N={})| - |average(N={})|)", cfg.n_max, ladder[0]),
            max_growth,
            "<",
            cfg.decay_slack,
        ),
    ];
    let stages = vec![
        Stage {
            name: "hypotheses",
            metrics: json!({
                "orthogonality_condition": perp.as_ref().map(perp_summary),
                "tempered_constant_estimate": c_hat,
                "weight_kronecker": kronecker_metrics(&sc.weight),
            }),
        },
        Stage {
            name: "ladder",
            metrics: json!({
                "ladder": ladder,
                "averages": runs.iter().map(|r| r.averages.clone()).collect::<Vec<_>>(),
                "max_abs_final": max_final,
            }),
        },
    ];
    let tolerances = BTreeMap::from([("final_abs_average", cfg.tolerance), ("decay_slack", cfg.decay_slack)]);
    let table = ladder_table("ladder", &ladder, &runs, false);
    Ok((
        tolerances,
        stages,
        Verdict::from_checks(checks, hypothesis_met, true, notes),
        vec![table],
    ))
}

pub fn run_return_times(cfg: &ReturnTimesConfig, seed: u64) -> Result<Outcome> {
    check_window(cfg.n_max, cfg.ladder_min, cfg.samples)?;
    let sc = Scenario::parse(&cfg.weight, &cfg.system, &cfg.obs)?;
    let seq = averaging_seq(sc.system.group(), cfg.n_max)?;
    let ladder = ladder_down(cfg.n_max, cfg.ladder_min);
    if ladder.len() < 2 {
        return Err(Error::InvalidParam("ladder needs at least two rungs".into()));
    }
    let mut notes = Vec::new();
    let hypothesis_met = match &sc.weight {
        WeightSpec::Orbit { system, obs, .. } => match kronecker_project(system, obs) {
            Ok(_) => true,
            Err(e) => {
                notes.push(format!("source system not certified ergodic: {e}"));
                false
            }
        },
        _ => {
            notes.push("weight is not generated by a catalog system".into());
            false
        }
    };
    let limit = sc.system.integral(&sc.obs)?;
    let runs = run_samples(
        &sc,
        &seq,
        &ladder,
        cfg.samples,
        cfg.x_mode,
        cfg.y.as_deref(),
        seed,
        cfg.control,
    )?;
    let k = ladder.len() - 1;
    let diff = |v: &[f64]| (v[k] - v[k - 1]).abs();
    let max_diff = runs.iter().map(|r| diff(&r.averages)).fold(0.0, f64::max);
    let mut checks = vec![Check::new(
        format!("max |average(N={}) - average(N={})|", ladder[k], ladder[k - 1]),
        max_diff,
        "<=",
        cfg.tolerance,
    )];
    let mut control = Value::Null;
    if cfg.control {
        let ctrl: Vec<&Vec<f64>> = runs
            .iter()
            .map(|r| r.control.as_ref().expect("control requested"))
            .collect();
        let cdiff = ctrl.iter().map(|v| diff(v)).fold(0.0, f64::max);
        let cgap = ctrl.iter().map(|v| (v[k] - limit).abs()).fold(0.0, f64::max);
        checks.push(Check::new(
            "control: max successive difference at top rung",
            cdiff,
            "<=",
            cfg.tolerance,
        ));
        checks.push(Check::new(
            "control: max |average - integral| at top rung",
            cgap,
            "<=",
            cfg.tolerance,
        ));
        control = json!({
            "integral": limit,
            "averages": ctrl,
            "max_successive_difference": cdiff,
            "max_gap_to_integral": cgap,
        });
    }
    let stages = vec![
        Stage {
            name: "source",
            metrics: json!({ "weight_kronecker": kronecker_metrics(&sc.weight) }),
        },
        Stage {
            name: "ladder",
            metrics: json!({
                "ladder": ladder,
                "averages": runs.iter().map(|r| r.averages.clone()).collect::<Vec<_>>(),
                "max_successive_difference": max_diff,
            }),
        },
        Stage {
            name: "control",
            metrics: control,
        },
    ];
    let tolerances = BTreeMap::from([("successive_difference", cfg.tolerance), ("control_gap", cfg.tolerance)]);
    let table = ladder_table("ladder", &ladder, &runs, cfg.control);
    Ok((
        tolerances,
        stages,
        Verdict::from_checks(checks, hypothesis_met, true, notes),
        vec![table],
    ))
}

fn phase_eq(a: f64, b: f64) -> bool {
    Phase::from_f64(a - b).dist_to_zero() < defaults::PHASE_MATCH
}

fn e(t: f64) -> Complex64 {
    Phase::from_f64(t).expi()
}

/// Limit of `E_{n<N} f(x + nθ₀)·e(nθ)` for circle observables.
fn rotation_limit(f: &Observable, theta0: f64, x: f64, theta: f64) -> Option<Complex64> {
    let ind = |b: bool| if b { 1.0 } else { 0.0 };
    match f {
        Observable::Const(v) => Some(Complex64::new(v * ind(phase_eq(theta, 0.0)), 0.0)),
        Observable::Cos { k } => {
            let k = *k as f64;
            Some(
                (e(k * x) * ind(phase_eq(k * theta0 + theta, 0.0)) + e(-k * x) * ind(phase_eq(theta, k * theta0)))
                    * 0.5,
            )
        }
        Observable::Sin { k } => {
            let k = *k as f64;
            let two_i = Complex64::new(0.0, 2.0);
            Some(
                (e(k * x) * ind(phase_eq(k * theta0 + theta, 0.0)) - e(-k * x) * ind(phase_eq(theta, k * theta0)))
                    / two_i,
            )
        }
        Observable::Sum(terms) => {
            let mut s = Complex64::new(0.0, 0.0);
            for (c, t) in terms {
                s += rotation_limit(t, theta0, x, theta)? * *c;
            }
            Some(s)
        }
        _ => None,
    }
}

/// Closed-form character limit and whether it is approached at the
/// deterministic `1/N` rate (`true`) or only at a fluctuation rate.
fn character_limit(spec: &WeightSpec, x: Option<&Point>, theta: f64) -> Option<(Complex64, bool)> {
    let zero = Complex64::new(0.0, 0.0);
    match spec {
        WeightSpec::Zero => Some((zero, true)),
        WeightSpec::Const(v) => rotation_limit(&Observable::Const(*v), 0.0, 0.0, theta).map(|l| (l, true)),
        WeightSpec::Cos { theta: t0 } => rotation_limit(&Observable::Cos { k: 1 }, *t0, 0.0, theta).map(|l| (l, true)),
        WeightSpec::Alternating => rotation_limit(&Observable::Cos { k: 1 }, 0.5, 0.0, theta).map(|l| (l, true)),
        WeightSpec::Bernoulli { .. } => Some((zero, false)),
        WeightSpec::File(_) => None,
        WeightSpec::Orbit { system, obs, .. } => {
            match (system, x) {
                (SystemModel::Rotation { theta: t0 }, Some(Point::Circle(x0))) if t0.len() == 1 => {
                    return rotation_limit(obs, t0[0].to_f64(), x0.to_f64(), theta).map(|l| (l, true));
                }
                (SystemModel::Skew { theta: t0 }, Some(Point::Torus2(x0, _))) => {
                    if let Some(l) = rotation_limit(obs, t0.to_f64(), x0.to_f64(), theta) {
                        return Some((l, true));
                    }
                }
                _ => {}
            }
            match kronecker_project(system, obs) {
                Ok((kr, _)) if kr == Observable::Const(0.0) => Some((zero, false)),
                _ => None,
            }
        }
    }
}

pub fn run_wiener_wintner(cfg: &WienerWintnerConfig, seed: u64) -> Result<Outcome> {
    check_window(cfg.n_max, cfg.ladder_min, 1)?;
    let weight: WeightSpec = cfg.weight.parse()?;
    if let WeightSpec::Orbit { system, .. } = &weight {
        if system.group() != GroupModel::IntLine {
            return Err(Error::Unsupported(
                "character averages are computed for ℤ-actions".into(),
            ));
        }
    }
    if cfg.characters.is_empty() {
        return Err(Error::InvalidParam("empty character grid".into()));
    }
    let chars = cfg
        .characters
        .iter()
        .map(|&t| crate::dynamics::CharacterId::new(vec![t]))
        .collect::<Result<Vec<_>>>()?;
    let ladder = ladder_down(cfg.n_max, cfg.ladder_min);
    if ladder.len() < 2 {
        return Err(Error::InvalidParam("ladder needs at least two rungs".into()));
    }
    let seq = averaging_seq(GroupModel::IntLine, cfg.n_max)?;
    // one base point shared by every character
    let x = weight_point(&weight, cfg.x_mode, seed, 0)?;
    let c = build_weight(&weight, x.as_ref(), seq.set(cfg.n_max)?)?;

    let k = ladder.len() - 1;
    let mut checks = Vec::new();
    let mut per_char = Vec::new();
    let mut rows = Vec::new();
    for chi in &chars {
        let t = Phase::from_f64(chi.theta[0]);
        let re = ladder_means(&seq, &ladder, |g| c.value(g).unwrap_or(0.0) * t.times(g.x()).cos())?;
        let im = ladder_means(&seq, &ladder, |g| c.value(g).unwrap_or(0.0) * t.times(g.x()).sin())?;
        let avgs: Vec<Complex64> = re.iter().zip(&im).map(|(&a, &b)| Complex64::new(a, b)).collect();
        let stab = (avgs[k] - avgs[k - 1]).norm();
        checks.push(Check::new(
            format!("θ={}: |avg(N={}) - avg(N={})|", chi.theta[0], ladder[k], ladder[k - 1]),
            stab,
            "<=",
            cfg.stability_tolerance,
        ));
        let limit = character_limit(&weight, x.as_ref(), chi.theta[0]);
        let gap = limit.map(|(l, _)| (avgs[k] - l).norm());
        if let (Some((_, exact)), Some(gap)) = (limit, gap) {
            let tol = if exact {
                cfg.exact_tolerance
            } else {
                cfg.random_tolerance
            };
            checks.push(Check::new(
                format!("θ={}: |avg(N={}) - closed-form limit|", chi.theta[0], ladder[k]),
                gap,
                "<=",
                tol,
            ));
        }
        for (n, a) in ladder.iter().zip(&avgs) {
            rows.push(vec![
                format!("{}", chi.theta[0]),
                n.to_string(),
                format!("{}", a.re),
                format!("{}", a.im),
                format!("{}", a.norm()),
            ]);
        }
        per_char.push(json!({
            "theta": chi.theta[0],
            "averages": avgs.iter().map(|a| [a.re, a.im]).collect::<Vec<_>>(),
            "moduli": avgs.iter().map(|a| a.norm()).collect::<Vec<_>>(),
            "stabilization": stab,
            "closed_form_limit": limit.map(|(l, _)| [l.re, l.im]),
            "limit_rate": limit.map(|(_, exact)| if exact { "deterministic" } else { "fluctuation" }),
            "gap_to_limit": gap,
        }));
    }
    let stages = vec![
        Stage {
            name: "base-point",
            metrics: json!({
                "x_mode": cfg.x_mode,
                "point": x.as_ref().map(|p| format!("{p:?}")),
                "weight_kronecker": kronecker_metrics(&weight),
            }),
        },
        Stage {
            name: "characters",
            metrics: json!({ "ladder": ladder, "characters": per_char }),
        },
    ];
    let tolerances = BTreeMap::from([
        ("stabilization", cfg.stability_tolerance),
        ("closed_form_deterministic", cfg.exact_tolerance),
        ("closed_form_fluctuating", cfg.random_tolerance),
    ]);
    let table = CsvTable {
        name: "characters".into(),
        header: vec!["theta", "N", "re", "im", "modulus"],
        rows,
    };
    let notes = vec!["a single sampled base point stands in for the full-measure set of the theorem".into()];
    Ok((
        tolerances,
        stages,
        Verdict::from_checks(checks, true, true, notes),
        vec![table],
    ))
}

pub fn run_covering_verification(cfg: &CoveringConfig, seed: u64) -> Result<Outcome> {
    let model: GroupModel = cfg.model.parse()?;
    let spec: SeqSpec = cfg.seq.parse()?;
    let scales = spec
        .range
        .ok_or_else(|| Error::InvalidParam(format!("sequence {} needs a scale range such as pow2:1..6", cfg.seq)))?;
    let seq = spec.build(model, scales.1)?;
    let targets = parse_targets(model, &cfg.targets, scales)?;
    let mut params = PoissonParams::new(cfg.c, seed)?;
    if let Some(k) = cfg.intensity {
        params = params.with_intensity(k)?;
    }
    let rep: MomentReport = covering_moments(&seq, scales, targets, &params, cfg.trials)?;
    let mut checks: Vec<Check> = rep
        .checks
        .iter()
        .map(|b| Check {
            name: format!("{} {} bound (+{}·SE)", b.name, b.direction, b.slack_se),
            observed: b.estimate.value,
            relation: b.direction,
            threshold: b.bound,
            pass: b.pass,
        })
        .collect();
    if let Some(s) = &rep.single_scale {
        for (name, ok) in [
            (
                "single-scale conditional mean within 3 SE of closed form",
                s.conditional_mean_within_3se,
            ),
            (
                "single-scale conditional second moment within 3 SE of closed form",
                s.conditional_second_within_3se,
            ),
            (
                "single-scale integral within 3 SE of closed form",
                s.integral_within_3se,
            ),
        ] {
            if let Some(ok) = ok {
                checks.push(Check {
                    name: name.into(),
                    observed: None,
                    relation: "<=",
                    threshold: 3.0,
                    pass: ok,
                });
            }
        }
    }
    let hypothesis_met = rep.tempered_constant <= cfg.c;
    let notes = rep.warnings.clone();
    let stages = vec![Stage {
        name: "moments",
        metrics: to_value(&rep),
    }];
    let tolerances = BTreeMap::from([("standard_errors", defaults::COVER_SLACK_SE)]);
    Ok((
        tolerances,
        stages,
        Verdict::from_checks(checks, hypothesis_met, true, notes),
        Vec::new(),
    ))
}

/// Good-set membership `a ∈ S_{δ,L,R}(c)` for `a = 0, 1, …`, extended on
/// demand, with running counts for densities in `[0, N)`.
struct GoodCache {
    l: usize,
    r: usize,
    prefix: Vec<u32>,
}

impl GoodCache {
    fn new(l: usize, r: usize) -> Self {
        GoodCache { l, r, prefix: vec![0] }
    }

    /// `|S ∩ [0, n)|`.
    fn count_below(&mut self, c: &WeightFn, n: usize, delta: f64) -> Result<u32> {
        let have = self.prefix.len() - 1;
        if n > have {
            let (l, r) = (self.l, self.r);
            let fresh = par::map_range(n - have, |k| -> Result<bool> {
                let a = (have + k) as i64;
                let mut s = NeumaierSum::new();
                for m in 0..r {
                    let g = m as i64;
                    s.add(c.at(&Elem::int(g))? * c.at(&Elem::int(g + a))?);
                    if m + 1 >= l && (s.value() / (m + 1) as f64).abs() >= delta {
                        return Ok(false);
                    }
                }
                Ok(true)
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
            for good in fresh {
                let last = *self.prefix.last().expect("nonempty");
                self.prefix.push(last + good as u32);
            }
        }
        Ok(self.prefix[n])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
struct Blocked {
    interval: usize,
    tried_l: usize,
    failing_n: usize,
    hypothesis: &'static str,
    earlier_interval: usize,
    value: f64,
    threshold: f64,
}

pub fn run_orth_lemma_bound(cfg: &OrthLemmaConfig, seed: u64) -> Result<Outcome> {
    if !(cfg.eps > 0.0) || !(cfg.c >= 1.0) {
        return Err(Error::InvalidParam("need ε > 0 and C ≥ 1".into()));
    }
    let k = match cfg.k {
        Some(0) => return Err(Error::InvalidParam("K must be positive".into())),
        Some(k) => k,
        None => (25.0 * cfg.c * cfg.c / cfg.eps.powi(4)).floor() as usize + 1,
    };
    let delta = cfg.delta.unwrap_or(cfg.eps.powi(4) / (100.0 * k as f64));
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParam(format!("δ = {delta} not in (0, 1)")));
    }
    if cfg.l_start == 0 || 2 * cfg.l_start > cfg.horizon {
        return Err(Error::InvalidParam("need 1 ≤ l_start ≤ horizon/2".into()));
    }
    let h = cfg.horizon;
    let i_scale = cfg.i_scale.unwrap_or(h);
    let bound = 5.0 * cfg.c / (cfg.eps * (k as f64).sqrt());
    let vacuous = bound > 1.0;
    let z = GroupModel::IntLine;

    let weight: WeightSpec = cfg.weight.parse()?;
    let x = weight_point(&weight, XMode::Fixed, seed, 0)?;
    let c_window = (4 * h).max(cfg.perp_horizon).max(i_scale + h);
    let c = build_weight(&weight, x.as_ref(), FiniteRegion::interval(z, 0, c_window as i64)?)?;
    let perp_seq = FolnerSeq::new(z, SeqKind::Interval, cfg.perp_horizon)?;
    let perp = check_perp(
        &c,
        &perp_seq,
        &PerpParams::for_horizon(cfg.perp_horizon, &cfg.perp_deltas)?,
    )?;

    // greedy construction with R_j = 2 L_j
    let f = |n: usize| FiniteRegion::interval(z, 0, n as i64);
    let mut intervals: Vec<(usize, usize)> = Vec::new();
    let mut caches: Vec<GoodCache> = Vec::new();
    let mut blocked: Option<Blocked> = None;
    'outer: for j in 0..k {
        let mut l = intervals.last().map_or(cfg.l_start, |&(_, r)| r + 1);
        let mut last_fail: Option<Blocked> = None;
        while 2 * l <= h {
            let mut failed = None;
            'scan: for n in l..=2 * l {
                let f_n = f(n)?;
                for (i, &(_, ri)) in intervals.iter().enumerate() {
                    let b = k_boundary_len(&f(ri)?, &f_n)? as f64;
                    if b >= delta * n as f64 {
                        failed = Some(Blocked {
                            interval: j + 1,
                            tried_l: l,
                            failing_n: n,
                            hypothesis: "boundary of F_N relative to F_(j)",
                            earlier_interval: i + 1,
                            value: b / n as f64,
                            threshold: delta,
                        });
                        break 'scan;
                    }
                }
                for (i, cache) in caches.iter_mut().enumerate() {
                    let d = cache.count_below(&c, n, delta)? as f64 / n as f64;
                    if d < 1.0 - delta {
                        failed = Some(Blocked {
                            interval: j + 1,
                            tried_l: l,
                            failing_n: n,
                            hypothesis: "density of the good set in F_N",
                            earlier_interval: i + 1,
                            value: d,
                            threshold: 1.0 - delta,
                        });
                        break 'scan;
                    }
                }
            }
            match failed {
                None => {
                    intervals.push((l, 2 * l));
                    caches.push(GoodCache::new(l, 2 * l));
                    continue 'outer;
                }
                Some(b) => {
                    l = b.failing_n + 1;
                    last_fail = Some(b);
                }
            }
        }
        blocked = Some(last_fail.unwrap_or(Blocked {
            interval: j + 1,
            tried_l: l,
            failing_n: 2 * l,
            hypothesis: "R_j = 2 L_j exceeds the horizon",
            earlier_interval: j,
            value: (2 * l) as f64,
            threshold: h as f64,
        }));
        break;
    }
    let constructed = blocked.is_none();
    let mut notes = Vec::new();
    if vacuous {
        notes.push(format!("bound 5C/(ε√K) = {bound:.4} exceeds 1 and is vacuous"));
    }
    if !perp.passed {
        notes.push("weight does not pass the finite-horizon orthogonality check".into());
    }
    let mut checks = vec![Check::new(
        "intervals constructed",
        intervals.len() as f64,
        ">=",
        k as f64,
    )];
    let mut lemma = Value::Null;
    let mut i_ok = true;
    if constructed {
        let r_k = intervals.last().expect("k ≥ 1").1;
        let i_set = f(i_scale)?;
        let mut i_boundaries = Vec::new();
        for &(_, r) in &intervals {
            let b = inner_boundary_len(&f(r)?, &i_set)? as f64 / i_scale as f64;
            i_ok &= b < delta;
            i_boundaries.push(b);
        }
        if !i_ok {
            notes.push(format!("I = F_{i_scale} violates |I ∩ F_(j)⁻¹I^∁| < δ|I| for some j"));
        }
        let seq = FolnerSeq::new(z, SeqKind::Interval, r_k)?;
        let f_window = FiniteRegion::interval(z, 0, (i_scale + r_k) as i64)?;
        let mut family = Vec::new();
        let mut worst = 0.0f64;
        let mut worst_regular = 0.0f64;
        for (fi, name) in cfg.family.iter().enumerate() {
            let fw = if name == "self" {
                c.clone()
            } else {
                let spec: WeightSpec = name.parse()?;
                let fx = weight_point(&spec, XMode::Fixed, seed.wrapping_add(fi as u64 + 1), 0)?;
                build_weight(&spec, fx.as_ref(), f_window.clone())?
            };
            let maxima = max_abs_correlations(&c, &fw, &seq, i_set.elements(), &intervals)?;
            let densities: Vec<f64> = (0..intervals.len())
                .map(|j| maxima.iter().filter(|m| m[j] >= cfg.eps).count() as f64 / i_scale as f64)
                .collect();
            let left = densities.iter().sum::<f64>() / k as f64;
            worst = worst.max(left);
            if name != "self" {
                worst_regular = worst_regular.max(left);
            }
            family.push(json!({ "f": name, "densities": densities, "left_side": left }));
        }
        checks.push(Check::new(
            "max over f of (1/K)Σ d_I(A_(j)) against 5C/(ε√K)",
            worst,
            "<",
            bound,
        ));
        checks.push(Check::new(
            "max over non-adversarial f of (1/K)Σ d_I(A_(j))",
            worst_regular,
            "<=",
            cfg.observed_tolerance,
        ));
        lemma = json!({
            "i_scale": i_scale,
            "i_boundary_ratios": i_boundaries,
            "i_hypothesis_met": i_ok,
            "family": family,
            "max_left_side": worst,
        });
    }
    let stages = vec![
        Stage {
            name: "parameters",
            metrics: json!({
                "k": k,
                "eps": cfg.eps,
                "c": cfg.c,
                "delta": delta,
                "bound": bound,
                "bound_vacuous": vacuous,
                "orthogonality_condition": perp_summary(&perp),
            }),
        },
        Stage {
            name: "construction",
            metrics: json!({
                "intervals": intervals,
                "constructed": constructed,
                "blocked": blocked,
                "horizon": h,
            }),
        },
        Stage {
            name: "lemma",
            metrics: lemma,
        },
    ];
    if let Some(b) = &blocked {
        notes.push(format!(
            "{}: interval {} blocked by {} (earlier interval {}, N = {}, value {:.3e} vs {:.3e})",
            Error::Unconstructible(format!("horizon {h}")),
            b.interval,
            b.hypothesis,
            b.earlier_interval,
            b.failing_n,
            b.value,
            b.threshold
        ));
    }
    let tolerances = BTreeMap::from([("observed_left_side", cfg.observed_tolerance), ("delta", delta)]);
    let verdict = Verdict::from_checks(checks, perp.passed && i_ok, constructed, notes);
    Ok((tolerances, stages, verdict, Vec::new()))
}

/// `(N, average)` along a geometric ladder ending at `n_max`.
pub fn average_ladder(
    weight: &WeightSpec,
    system: &SystemModel,
    obs: &Observable,
    y: &Point,
    n_max: usize,
    ladder_min: usize,
) -> Result<Vec<(usize, f64)>> {
    let seq = averaging_seq(system.group(), n_max)?;
    let ladder = ladder_down(n_max, ladder_min);
    let x = match weight {
        WeightSpec::Orbit { system, point, .. } => Some(point.resolve(system)?),
        _ => None,
    };
    let c = build_weight(weight, x.as_ref(), seq.set(n_max)?)?;
    let g = system.orbit_fn(obs, y)?;
    let means = ladder_means(&seq, &ladder, |e| c.value(e).unwrap_or(0.0) * g(e))?;
    Ok(ladder.into_iter().zip(means).collect())
}

/// Point for the CLI: explicit coordinates, or drawn from `seed`.
pub fn resolve_point(sys: &SystemModel, coords: Option<&str>, seed: u64) -> Result<Point> {
    match coords {
        Some(s) => parse_point(sys, s, seed),
        None => PointSpec::Random { seed }.resolve(sys),
    }
}
