use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use folnerlab::covering::{covering_moments, parse_targets, PoissonParams};
use folnerlab::dynamics::{Observable, SystemModel, WeightSpec};
use folnerlab::error::Error;
use folnerlab::experiments::{self, average_ladder, resolve_point, ExperimentConfig};
use folnerlab::folner::{defect_table, parse_index_range, tempered_constant, FolnerSeq, SeqKind, SeqSpec};
use folnerlab::group::{parse_region, FiniteRegion, GroupModel};
use folnerlab::par;
use folnerlab::weights::{check_perp, PerpParams, DEFAULT_DELTAS};

#[derive(Parser)]
#[command(
    name = "folnerlab",
    version,
    about = "Følner diagnostics, random coverings and weighted ergodic averages"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Følner sequence diagnostics.
    #[command(subcommand)]
    Folner(FolnerCmd),
    /// Weight diagnostics.
    #[command(subcommand)]
    Weights(WeightsCmd),
    /// Random covering sampler.
    #[command(subcommand)]
    Covering(CoveringCmd),
    /// Weighted ergodic averages.
    #[command(subcommand)]
    Dyn(DynCmd),
    /// Weighted averages against a target system along a ladder of scales.
    ReturnTimes(ExperimentArgs),
    /// Character-twisted weighted averages for one base point.
    WienerWintner(ExperimentArgs),
    /// Weighted averages of a Kronecker-orthogonal weight.
    Orthogonality(ExperimentArgs),
    /// Moment bounds of the random covering.
    CoveringVerify(ExperimentArgs),
    /// Interval construction and density bound of the orthogonality lemma.
    OrthLemmaBound(ExperimentArgs),
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for report.json and CSV tables; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum FolnerCmd {
    /// Weak and strong defects per index.
    Defect {
        #[arg(long)]
        model: String,
        #[arg(long)]
        seq: String,
        #[arg(long = "K")]
        k: String,
        /// Inclusive index range, e.g. 1..100.
        #[arg(long = "N")]
        n: String,
        /// `csv`, `json`, or a file path (format from its extension).
        #[arg(long, default_value = "csv")]
        out: String,
    },
}

#[derive(Subcommand)]
enum WeightsCmd {
    /// Finite-horizon orthogonality check.
    Perp {
        #[arg(long)]
        weight: String,
        #[arg(long, default_value_t = 100_000)]
        horizon: usize,
        /// Single δ; the default grid when absent.
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long, default_value = "json")]
        out: String,
    },
}

#[derive(Subcommand)]
enum CoveringCmd {
    /// Monte Carlo moments against the covering bounds.
    Verify {
        #[arg(long, default_value = "Z")]
        model: String,
        #[arg(long)]
        seq: String,
        #[arg(long = "C")]
        c: f64,
        #[arg(long)]
        intensity: Option<f64>,
        #[arg(long)]
        targets: String,
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value = "json")]
        out: String,
    },
}

#[derive(Subcommand)]
enum DynCmd {
    /// `E_{g∈F_N} c(g) f(S_g y)` along a halving ladder.
    Average {
        #[arg(long)]
        weight: String,
        #[arg(long)]
        system: String,
        #[arg(long)]
        obs: String,
        #[arg(long = "N")]
        n: usize,
        /// Smallest ladder rung.
        #[arg(long, default_value_t = 1000)]
        ladder_min: usize,
        /// Target point coordinates; drawn from `--seed` when absent.
        #[arg(long)]
        y: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "csv")]
        out: String,
    },
}

#[derive(Clone, Copy, PartialEq)]
enum Format {
    Csv,
    Json,
}

/// Where `--out` sends output.
fn sink(out: &str) -> (Format, Option<&Path>) {
    match out {
        "csv" => (Format::Csv, None),
        "json" => (Format::Json, None),
        p => {
            let path = Path::new(p);
            let fmt = if path.extension().is_some_and(|e| e == "csv") {
                Format::Csv
            } else {
                Format::Json
            };
            (fmt, Some(path))
        }
    }
}

fn emit(text: &str, path: Option<&Path>) -> anyhow::Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

/// Exit code for an error: 3 when hypotheses cannot be met, 2 otherwise.
fn error_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(Error::Unconstructible(_)) => 3,
        _ => 2,
    }
}

fn folner_defect(model: &str, seq: &str, k: &str, n: &str, out: &str) -> anyhow::Result<u8> {
    let model: GroupModel = model.parse()?;
    let spec: SeqSpec = seq.parse()?;
    let k = parse_region(model, k)?;
    let range = parse_index_range(n)?;
    let s = spec.build(model, range.1)?;
    let rows = defect_table(&s, &k, range)?;
    let (fmt, path) = sink(out);
    let text = match fmt {
        Format::Csv => {
            let mut t = String::from("N,weak_defect,strong_defect,tempered_ratio\n");
            for r in &rows {
                t.push_str(&format!(
                    "{},{},{},{}\n",
                    r.n, r.weak_defect, r.strong_defect, r.tempered_ratio
                ));
            }
            t
        }
        Format::Json => {
            let c = tempered_constant(&s, range.1)?;
            let v = json!({ "model": model.to_string(), "seq": spec.to_string(), "C_estimate": c, "defects": rows });
            serde_json::to_string_pretty(&v)? + "\n"
        }
    };
    emit(&text, path)?;
    Ok(0)
}

fn weights_perp(weight: &str, horizon: usize, delta: Option<f64>, out: &str) -> anyhow::Result<u8> {
    let spec: WeightSpec = weight.parse()?;
    let deltas = match delta {
        Some(d) => vec![d],
        None => DEFAULT_DELTAS.to_vec(),
    };
    let params = PerpParams::for_horizon(horizon, &deltas)?;
    let z = GroupModel::IntLine;
    let seq = FolnerSeq::new(z, SeqKind::Interval, horizon)?;
    let c = spec.build(FiniteRegion::interval(z, 0, horizon as i64)?)?;
    let verdict = check_perp(&c, &seq, &params)?;
    let (fmt, path) = sink(out);
    if fmt == Format::Csv {
        bail!("weights perp writes JSON only");
    }
    let v = json!({ "weight": weight, "horizon": horizon, "verdict": verdict });
    emit(&(serde_json::to_string_pretty(&v)? + "\n"), path)?;
    Ok(if verdict.passed { 0 } else { 1 })
}

#[allow(clippy::too_many_arguments)]
fn covering_verify(
    model: &str,
    seq: &str,
    c: f64,
    intensity: Option<f64>,
    targets: &str,
    trials: usize,
    seed: u64,
    out: &str,
) -> anyhow::Result<u8> {
    let model: GroupModel = model.parse()?;
    let spec: SeqSpec = seq.parse()?;
    let Some(scales) = spec.range else {
        bail!("--seq needs a scale range such as pow2:1..6")
    };
    let s = spec.build(model, scales.1)?;
    let targets = parse_targets(model, targets, scales)?;
    let mut params = PoissonParams::new(c, seed)?;
    if let Some(k) = intensity {
        params = params.with_intensity(k)?;
    }
    let rep = covering_moments(&s, scales, targets, &params, trials)?;
    for w in &rep.warnings {
        eprintln!("warning: {w}");
    }
    let (fmt, path) = sink(out);
    if fmt == Format::Csv {
        bail!("covering verify writes JSON only");
    }
    emit(&(serde_json::to_string_pretty(&rep)? + "\n"), path)?;
    Ok(if !rep.warnings.is_empty() {
        3
    } else if rep.pass {
        0
    } else {
        1
    })
}

#[allow(clippy::too_many_arguments)]
fn dyn_average(
    weight: &str,
    system: &str,
    obs: &str,
    n: usize,
    ladder_min: usize,
    y: Option<&str>,
    seed: u64,
    out: &str,
) -> anyhow::Result<u8> {
    let weight: WeightSpec = weight.parse()?;
    let system: SystemModel = system.parse()?;
    let obs: Observable = obs.parse()?;
    let y = resolve_point(&system, y, seed)?;
    let rows = average_ladder(&weight, &system, &obs, &y, n, ladder_min.min(n))?;
    let (fmt, path) = sink(out);
    let text = match fmt {
        Format::Csv => {
            let mut t = String::from("N,average\n");
            for (n, a) in &rows {
                t.push_str(&format!("{n},{a}\n"));
            }
            t
        }
        Format::Json => {
            let v: Vec<_> = rows.iter().map(|(n, a)| json!({ "N": n, "average": a })).collect();
            serde_json::to_string_pretty(&v)? + "\n"
        }
    };
    emit(&text, path)?;
    Ok(0)
}

fn experiment(id: &str, args: &ExperimentArgs) -> anyhow::Result<u8> {
    let text = fs::read_to_string(&args.config).with_context(|| format!("reading {}", args.config.display()))?;
    let config = ExperimentConfig::from_json(&text, Some(id), args.seed)?;
    let started = Instant::now();
    let report = experiments::run(&config)?;
    eprintln!("{id}: {} in {:.2?}", report.verdict.status, started.elapsed());
    for n in &report.verdict.notes {
        eprintln!("note: {n}");
    }
    let json = report.to_json() + "\n";
    match &args.out {
        Some(dir) => {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            fs::write(dir.join("report.json"), &json)?;
            for t in &report.tables {
                fs::write(dir.join(format!("{}.csv", t.name)), t.render())?;
            }
        }
        None => emit(&json, None)?,
    }
    Ok(report.verdict.exit_code as u8)
}

fn dispatch(cli: Cli) -> anyhow::Result<u8> {
    match cli.command {
        Command::Folner(FolnerCmd::Defect { model, seq, k, n, out }) => folner_defect(&model, &seq, &k, &n, &out),
        Command::Weights(WeightsCmd::Perp {
            weight,
            horizon,
            delta,
            out,
        }) => weights_perp(&weight, horizon, delta, &out),
        Command::Covering(CoveringCmd::Verify {
            model,
            seq,
            c,
            intensity,
            targets,
            trials,
            seed,
            out,
        }) => covering_verify(&model, &seq, c, intensity, &targets, trials, seed, &out),
        Command::Dyn(DynCmd::Average {
            weight,
            system,
            obs,
            n,
            ladder_min,
            y,
            seed,
            out,
        }) => dyn_average(&weight, &system, &obs, n, ladder_min, y.as_deref(), seed, &out),
        Command::ReturnTimes(a) => experiment("return-times", &a),
        Command::WienerWintner(a) => experiment("wiener-wintner", &a),
        Command::Orthogonality(a) => experiment("orthogonality", &a),
        Command::CoveringVerify(a) => experiment("covering-verify", &a),
        Command::OrthLemmaBound(a) => experiment("orth-lemma-bound", &a),
    }
}

fn main() -> ExitCode {
    par::init_threads_from_env();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(error_code(&e))
        }
    }
}
