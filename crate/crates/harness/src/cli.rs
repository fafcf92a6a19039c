//! Subcommands `gen`, `estimate`, `certify`, `bench` and `verify`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use resil_core::corefinder::{find_core, CoreConfig};
use resil_core::generators::{
    gen_basis_counterexample, gen_bounded_moments, gen_dist_tuples, gen_sbm, Adversary, GenMeta, LabeledDataset, SbmAttack,
};
use resil_core::io::{dataset_from_csv, dataset_to_csv, profile_to_csv, read_dataset, sidecar_path, write_dataset, write_matrix_bin};
use resil_core::lowrank::{recover_rank_k, recover_rank_k_auto, RankKConfig};
use resil_core::meanest::{recover_mean, recover_mean_auto, EstimatorConfig, EstimatorMode};
use resil_core::norms::norm_eval_mode;
use resil_core::resilience::{resilience_profile, PointSet, SigmaOptions};
use resil_core::{Error, Result};

use crate::acceptance;
use crate::bench::{records_to_csv, run_sweep, summarize, SweepConfig, SweepGenerator};
use crate::normarg::NormArg;
use crate::seeds::pool;

#[derive(Debug, Parser)]
#[command(name = "resil", version, about = "Resilience certificates and robust estimation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labeled dataset.
    Gen(GenArgs),
    /// Robust mean (or candidate list) or rank-k subspace of a dataset.
    Estimate(EstimateArgs),
    /// Resilience profile on an eps grid, or a certified core.
    Certify(CertifyArgs),
    /// Run a parameter sweep and write one CSV row per trial.
    Bench(BenchArgs),
    /// Run acceptance suites and print one PASS/FAIL line per check.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
    Bin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GenKind {
    Basis,
    Gaussian,
    BoundedMoments,
    DistTuples,
    Sbm,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, value_enum)]
    pub kind: GenKind,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 2)]
    pub d: usize,
    #[arg(long, default_value_t = 0.0)]
    pub eps: f64,
    /// Moment order (bounded-moments) or tuple size (dist-tuples).
    #[arg(long, default_value_t = 4.0)]
    pub k: f64,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    /// none | point-mass[:<dist>] | cluster-shift:<dist> | mirror:<count>:<dist>
    #[arg(long, default_value = "point-mass")]
    pub adversary: String,
    /// Comma-separated probabilities for dist-tuples; defaults to p_j proportional to 1 / (j + 1) on d atoms.
    #[arg(long)]
    pub pi: Option<String>,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    #[arg(long, default_value_t = 20.0)]
    pub a: f64,
    #[arg(long, default_value_t = 5.0)]
    pub b: f64,
    /// mirror-block | hub | random-dense
    #[arg(long, default_value = "mirror-block")]
    pub attack: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Bin)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Dataset file: .csv, .json, or a binary matrix with a .json sidecar.
    #[arg(long, conflicts_with = "points")]
    pub input: Option<PathBuf>,
    /// Inline one-dimensional points, comma-separated.
    #[arg(long, allow_hyphen_values = true)]
    pub points: Option<String>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Fraction of good points.
    #[arg(long)]
    pub alpha: f64,
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Search sigma by doubling instead of taking --sigma.
    #[arg(long)]
    pub auto_sigma: bool,
    /// fast-l2 | saddle-l2 | general
    #[arg(long, default_value = "fast-l2")]
    pub mode: String,
    #[arg(long, default_value = "l2")]
    pub norm: String,
    /// Recover a rank-k subspace instead of a mean; delta is then 1 - alpha.
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Report path (JSON). With --rank the matrix P goes next to it as <stem>.p.bin with sidecar <stem>.p.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CertifyArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, default_value = "l2")]
    pub norm: String,
    /// Comma-separated eps values for the resilience profile.
    #[arg(long, default_value = "0.1,0.25,0.5")]
    pub eps_grid: String,
    /// Center for the profile: mean, zero or truth (the dataset's stored center).
    #[arg(long, default_value = "mean")]
    pub center: String,
    /// Find a certified core keeping this fraction of weight instead of profiling.
    #[arg(long)]
    pub core: Option<f64>,
    /// Sampled directions for non-polyhedral norms.
    #[arg(long, default_value_t = 2000)]
    pub budget: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// JSON sweep configuration; flags below are ignored when given.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "gaussian")]
    pub generator: String,
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    #[arg(long, default_value_t = 10)]
    pub d: usize,
    /// Comma-separated eps grid.
    #[arg(long, default_value = "0.02,0.05,0.1,0.2")]
    pub eps: String,
    /// Comma-separated k grid (moment order or tuple size).
    #[arg(long, default_value = "inf")]
    pub k: String,
    #[arg(long, default_value = "fast-l2")]
    pub mode: String,
    #[arg(long, default_value = "l2")]
    pub norm: String,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long, default_value_t = 5)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write 0 for runtimes so that repeated runs give identical files.
    #[arg(long)]
    pub no_timing: bool,
    /// CSV of run records; the summary goes to stdout. Without it the CSV goes to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// counterexample | lemmas | estimators | rank-k | applications | fast-l2 | all
    #[arg(default_value = "all")]
    pub suite: String,
    /// Print results as JSON instead of PASS/FAIL lines.
    #[arg(long)]
    pub json: bool,
}

/// Process exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::PromiseViolated(_) | Error::NoResilientSubset => 3,
        Error::NoProgress => 4,
        _ => 2,
    }
}

/// Exit status when every command step succeeded but some checks failed.
pub const CHECKS_FAILED: i32 = 1;

fn parse_list(s: &str, what: &str) -> Result<Vec<f64>> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| {
            let t = t.trim();
            if t == "inf" {
                return Ok(f64::INFINITY);
            }
            t.parse::<f64>().map_err(|_| Error::InvalidConfig(format!("cannot parse {what} value {t:?}")))
        })
        .collect()
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text)?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()?;
        }
    }
    Ok(())
}

/// Dataset as a single JSON document, points stored column by column.
#[derive(Debug, Serialize, Deserialize)]
struct DatasetJson {
    rows: usize,
    cols: usize,
    points: Vec<Vec<f64>>,
    good_mask: Vec<bool>,
    true_center: Vec<f64>,
    meta: GenMeta,
}

fn dataset_to_json(ds: &LabeledDataset) -> Result<String> {
    let wire = DatasetJson {
        rows: ds.d(),
        cols: ds.n(),
        points: ds.points.column_iter().map(|c| c.iter().copied().collect()).collect(),
        good_mask: ds.good_mask.clone(),
        true_center: ds.true_center.iter().copied().collect(),
        meta: ds.meta.clone(),
    };
    Ok(serde_json::to_string_pretty(&wire)? + "\n")
}

fn dataset_from_json(text: &str) -> Result<LabeledDataset> {
    let w: DatasetJson = serde_json::from_str(text)?;
    if w.points.len() != w.cols || w.points.iter().any(|c| c.len() != w.rows) || w.good_mask.len() != w.cols {
        return Err(Error::Format("dataset JSON dimensions do not match".into()));
    }
    Ok(LabeledDataset {
        points: DMatrix::from_iterator(w.rows, w.cols, w.points.into_iter().flatten()),
        good_mask: w.good_mask,
        true_center: DVector::from_vec(w.true_center),
        meta: w.meta,
    })
}

fn parse_adversary(s: &str, d: usize) -> Result<Option<Adversary>> {
    let bad = || Error::InvalidConfig(format!("bad adversary {s:?}"));
    let num = |t: &str| t.parse::<f64>().map_err(|_| bad());
    // a vector of l2 length `dist` along the all-ones direction
    let along = |dist: f64| vec![dist / (d as f64).sqrt(); d];
    let parts: Vec<&str> = s.split(':').collect();
    let adv = match parts.as_slice() {
        ["none"] => return Ok(None),
        ["point-mass"] => Adversary::PointMass(along(5.0 * (d as f64).sqrt())),
        ["point-mass", r] => Adversary::PointMass(along(num(r)?)),
        ["cluster-shift", r] => Adversary::ClusterShift(along(num(r)?)),
        ["mirror", c, r] => {
            let count: usize = c.parse().map_err(|_| bad())?;
            if count < 2 {
                return Err(Error::InvalidConfig("mirror needs at least 2 copies".into()));
            }
            Adversary::MirrorCopies { count, shift: along(num(r)?) }
        }
        _ => return Err(bad()),
    };
    Ok(Some(adv))
}

fn skewed_pi(m: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..m).map(|j| 1.0 / (j + 1) as f64).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|r| r / total).collect()
}

pub fn generate(args: &GenArgs) -> Result<LabeledDataset> {
    if !(0.0..1.0).contains(&args.eps) {
        return Err(Error::InvalidEps(format!("eps = {} outside [0, 1)", args.eps)));
    }
    let adversary = || -> Result<Adversary> {
        match parse_adversary(&args.adversary, args.d)? {
            Some(a) => Ok(a),
            None if args.eps == 0.0 => Ok(Adversary::PointMass(vec![0.0; args.d])),
            None => Err(Error::InvalidConfig("eps > 0 needs an adversary".into())),
        }
    };
    match args.kind {
        GenKind::Basis => {
            if args.n == 0 {
                return Err(Error::InvalidConfig("n must be positive".into()));
            }
            Ok(gen_basis_counterexample(args.n))
        }
        GenKind::Gaussian => gen_bounded_moments(args.n, args.d, args.eps, args.sigma, f64::INFINITY, &adversary()?, args.seed),
        GenKind::BoundedMoments => gen_bounded_moments(args.n, args.d, args.eps, args.sigma, args.k, &adversary()?, args.seed),
        GenKind::DistTuples => {
            let pi = match &args.pi {
                Some(s) => parse_list(s, "pi")?,
                None => skewed_pi(args.d),
            };
            if !(args.k >= 1.0 && args.k.fract() == 0.0 && args.k.is_finite()) {
                return Err(Error::InvalidConfig(format!("tuple size k = {} must be a positive integer", args.k)));
            }
            let adv = match parse_adversary(&args.adversary, pi.len())? {
                Some(Adversary::PointMass(_)) if args.adversary == "point-mass" => {
                    let mut corner = vec![0.0; pi.len()];
                    corner[pi.len() - 1] = 1.0;
                    Adversary::PointMass(corner)
                }
                Some(a) => a,
                None => Adversary::PointMass(vec![0.0; pi.len()]),
            };
            gen_dist_tuples(&pi, args.k as usize, args.n, args.eps, &adv, args.seed)
        }
        GenKind::Sbm => gen_sbm(args.n, args.alpha, args.a, args.b, SbmAttack::parse(&args.attack)?, args.seed),
    }
}

fn cmd_gen(args: &GenArgs) -> Result<()> {
    let ds = generate(args)?;
    match args.format {
        Format::Bin => {
            let out = args.out.as_deref().ok_or_else(|| Error::InvalidConfig("--format bin needs --out".into()))?;
            write_dataset(out, &ds)
        }
        Format::Csv => emit(args.out.as_deref(), &dataset_to_csv(&ds)?),
        Format::Json => emit(args.out.as_deref(), &dataset_to_json(&ds)?),
    }
}

/// Points plus the full dataset when the input carried labels.
fn load_input(args: &InputArgs) -> Result<(DMatrix<f64>, Option<LabeledDataset>)> {
    if let Some(s) = &args.points {
        let vals = parse_list(s, "point")?;
        if vals.is_empty() {
            return Err(Error::InvalidInput("--points is empty".into()));
        }
        return Ok((DMatrix::from_row_slice(1, vals.len(), &vals), None));
    }
    let path = args.input.as_deref().ok_or_else(|| Error::InvalidConfig("give --input or --points".into()))?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => {
            let (points, _) = dataset_from_csv(&fs::read_to_string(path)?)?;
            Ok((points, None))
        }
        Some("json") => {
            let ds = dataset_from_json(&fs::read_to_string(path)?)?;
            Ok((ds.points.clone(), Some(ds)))
        }
        _ => {
            let ds = read_dataset(path)?;
            Ok((ds.points.clone(), Some(ds)))
        }
    }
}

#[derive(Serialize)]
struct EstimateOutput<T: Serialize> {
    report: T,
    /// Distance from the estimate (or the closest candidate) to the stored true center.
    error: Option<f64>,
}

fn cmd_estimate(args: &EstimateArgs) -> Result<()> {
    let sigma = match (args.sigma, args.auto_sigma) {
        (Some(_), true) => return Err(Error::InvalidConfig("--sigma and --auto-sigma are exclusive".into())),
        (None, false) => return Err(Error::InvalidConfig("give --sigma or --auto-sigma".into())),
        (s, _) => s,
    };
    let (points, labeled) = load_input(&args.input)?;
    let d = points.nrows();
    if let Some(k) = args.rank {
        let mut cfg = RankKConfig::new(k, 1.0 - args.alpha);
        if let Some(s) = sigma {
            cfg = cfg.with_sigma(s);
        }
        let rep = if sigma.is_some() { recover_rank_k(&points, &cfg)? } else { recover_rank_k_auto(&points, &cfg)? };
        if let Some(out) = &args.out {
            let bin = out.with_extension("p.bin");
            write_matrix_bin(&bin, &rep.p)?;
            let mut side = rep.sidecar();
            side["rows"] = d.into();
            side["cols"] = d.into();
            fs::write(sidecar_path(&bin), serde_json::to_string_pretty(&side)? + "\n")?;
        }
        let text = serde_json::to_string_pretty(&EstimateOutput { report: &rep, error: None })? + "\n";
        return emit(args.out.as_deref(), &text);
    }
    let (spec, vertex_mode) = NormArg::parse(&args.norm)?.spec(d)?;
    let mode = EstimatorMode::parse(&args.mode)?;
    let cfg = EstimatorConfig { vertex_mode, seed: args.seed, ..EstimatorConfig::with_mode(mode) };
    let rep = match sigma {
        Some(s) => recover_mean(&points, args.alpha, s, &spec, &cfg)?,
        None => recover_mean_auto(&points, args.alpha, None, &spec, &cfg)?,
    };
    let error = match &labeled {
        Some(ds) => {
            let dist = |v: &[f64]| norm_eval_mode((DVector::from_column_slice(v) - &ds.true_center).as_slice(), &spec, vertex_mode);
            match (&rep.estimate, &rep.candidates) {
                (Some(e), _) => Some(dist(e)?),
                (None, Some(cs)) => cs.iter().map(|c| dist(&c.mean)).collect::<Result<Vec<_>>>()?.into_iter().reduce(f64::min),
                _ => None,
            }
        }
        None => None,
    };
    let text = serde_json::to_string_pretty(&EstimateOutput { report: &rep, error })? + "\n";
    emit(args.out.as_deref(), &text)
}

fn cmd_certify(args: &CertifyArgs) -> Result<()> {
    let (points, labeled) = load_input(&args.input)?;
    let d = points.nrows();
    let (spec, mode) = NormArg::parse(&args.norm)?.spec(d)?;
    let set = match args.center.as_str() {
        "mean" => PointSet::new(points),
        "zero" => PointSet::with_center(points, DVector::zeros(d)),
        "truth" => {
            let ds = labeled.ok_or_else(|| Error::InvalidConfig("--center truth needs a labeled dataset".into()))?;
            PointSet::with_center(points, ds.true_center)
        }
        other => return Err(Error::InvalidConfig(format!("unknown center {other:?}; expected mean, zero or truth"))),
    };
    if let Some(keep) = args.core {
        let cfg = CoreConfig { mode, budget: args.budget, seed: args.seed, ..CoreConfig::default() };
        let res = find_core(&set, keep, &spec, &cfg)?;
        return emit(args.out.as_deref(), &(res.to_json()? + "\n"));
    }
    let grid = parse_list(&args.eps_grid, "eps")?;
    if grid.is_empty() {
        return Err(Error::InvalidConfig("eps grid is empty".into()));
    }
    let opts = SigmaOptions { mode, ..SigmaOptions::default() }.with_budget(args.budget).with_seed(args.seed);
    let profile = resilience_profile(&set, &grid, &spec, &opts)?;
    emit(args.out.as_deref(), &profile_to_csv(&profile)?)
}

fn sweep_config(args: &BenchArgs) -> Result<SweepConfig> {
    if let Some(path) = &args.config {
        return Ok(serde_json::from_str(&fs::read_to_string(path)?)?);
    }
    let generator: SweepGenerator = serde_json::from_value(serde_json::Value::String(args.generator.clone()))
        .map_err(|_| Error::InvalidConfig(format!("unknown generator {:?}; expected gaussian, bounded-moments or dist-tuples", args.generator)))?;
    Ok(SweepConfig {
        generator,
        n: args.n,
        d: args.d,
        eps: parse_list(&args.eps, "eps")?,
        k: parse_list(&args.k, "k")?,
        mode: EstimatorMode::parse(&args.mode)?,
        norm: args.norm.clone(),
        sigma: args.sigma,
        trials: args.trials,
        seed: args.seed,
        no_timing: args.no_timing,
    })
}

fn cmd_bench(args: &BenchArgs) -> Result<()> {
    let cfg = sweep_config(args)?;
    let records = run_sweep(&cfg)?;
    let csv = records_to_csv(&records)?;
    let summary = serde_json::to_string_pretty(&summarize(&cfg, &records))? + "\n";
    match &args.out {
        Some(p) => {
            fs::write(p, csv)?;
            emit(None, &summary)
        }
        None => {
            emit(None, &csv)?;
            eprint!("{summary}");
            Ok(())
        }
    }
}

fn cmd_verify(args: &VerifyArgs) -> Result<bool> {
    let ids = acceptance::suite_ids(&args.suite)?;
    let results = pool()?.install(|| ids.iter().map(|&id| acceptance::run_criterion(id)).collect::<Vec<_>>());
    if args.json {
        emit(None, &(serde_json::to_string_pretty(&results)? + "\n"))?;
    } else {
        let text: String = results.iter().map(|r| r.line() + "\n").collect();
        emit(None, &text)?;
    }
    Ok(results.iter().all(|r| r.pass))
}

/// Runs a parsed command and returns the process exit status.
pub fn run(cli: Cli) -> i32 {
    let out = match &cli.command {
        Command::Gen(a) => cmd_gen(a).map(|_| 0),
        Command::Estimate(a) => cmd_estimate(a).map(|_| 0),
        Command::Certify(a) => cmd_certify(a).map(|_| 0),
        Command::Bench(a) => cmd_bench(a).map(|_| 0),
        Command::Verify(a) => cmd_verify(a).map(|ok| if ok { 0 } else { CHECKS_FAILED }),
    };
    match out {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
