//! Parameter sweeps: one CSV row per (cell, trial) plus a per-cell summary.

use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use resil_core::generators::{gen_bounded_moments, gen_dist_tuples, tv_distance, Adversary, LabeledDataset};
use resil_core::io::{csv_with_schema, finish_csv};
use resil_core::linalg;
use resil_core::meanest::{recover_mean, recover_mean_auto, EstimatorConfig, EstimatorMode};
use resil_core::norms::norm_eval_mode;
use resil_core::{Error, Result};

use crate::normarg::NormArg;
use crate::seeds::{cell_seed, pool};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepGenerator {
    /// Gaussian good points, outliers at distance 5 sqrt(d) in one direction.
    Gaussian,
    /// Heavy-tailed good points with bounded k-th moments; the k grid is the moment order.
    BoundedMoments,
    /// Empirical distributions of k draws from a skewed law on d atoms; the k grid is the tuple size.
    DistTuples,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub generator: SweepGenerator,
    pub n: usize,
    pub d: usize,
    pub eps: Vec<f64>,
    /// Moment order or tuple size, depending on the generator. Ignored by `gaussian`.
    #[serde(default = "default_k")]
    pub k: Vec<f64>,
    pub mode: EstimatorMode,
    /// `l2`, `lp:<p>`, `l1` or `topk:<k>`.
    pub norm: String,
    /// Known variance bound; `None` runs the doubling search.
    #[serde(default)]
    pub sigma: Option<f64>,
    pub trials: usize,
    pub seed: u64,
    /// Write 0 in the runtime column so repeated runs give identical files.
    #[serde(default)]
    pub no_timing: bool,
}

fn default_k() -> Vec<f64> {
    vec![f64::INFINITY]
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.eps.is_empty() || self.k.is_empty() {
            return Err(Error::InvalidConfig("sweep grid is empty".into()));
        }
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trials must be at least 1".into()));
        }
        if self.n == 0 || self.d == 0 {
            return Err(Error::InvalidConfig("n and d must be positive".into()));
        }
        if let Some(e) = self.eps.iter().find(|e| !(0.0..0.5).contains(*e)) {
            return Err(Error::InvalidEps(format!("eps = {e} outside [0, 1/2)")));
        }
        NormArg::parse(&self.norm)?;
        Ok(())
    }

    /// Cells in row-major order over (eps, k).
    pub fn cells(&self) -> Vec<(f64, f64)> {
        let ks: &[f64] = if self.generator == SweepGenerator::Gaussian { &[f64::INFINITY] } else { &self.k };
        self.eps.iter().flat_map(|&e| ks.iter().map(move |&k| (e, k))).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub cell: usize,
    pub eps: f64,
    #[serde(serialize_with = "finite_or_inf")]
    pub k: f64,
    pub trial: usize,
    pub seed: u64,
    /// Distance to the true center in the sweep's norm.
    pub error: f64,
    pub naive_error: f64,
    /// Total variation error, for distribution learning only.
    pub tv_error: Option<f64>,
    pub seconds: f64,
    pub mode: EstimatorMode,
    pub sigma_used: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub cell: usize,
    pub eps: f64,
    #[serde(serialize_with = "finite_or_inf")]
    pub k: f64,
    pub median_error: f64,
    pub median_tv: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSummary {
    pub cells: Vec<CellSummary>,
    /// For each k, whether the median error is nondecreasing along the eps grid.
    pub monotone_in_eps: Vec<MonotoneCheck>,
    /// For each eps, ratios of median error between consecutive k values.
    pub k_ratios: Vec<(f64, Vec<f64>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotoneCheck {
    #[serde(serialize_with = "finite_or_inf")]
    pub k: f64,
    pub monotone: bool,
}

/// JSON has no infinity; write it as the string "inf".
fn finite_or_inf<S: serde::Serializer>(x: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if x.is_finite() {
        s.serialize_f64(*x)
    } else {
        s.serialize_str(if *x > 0.0 { "inf" } else { "-inf" })
    }
}

fn skewed_pi(m: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..m).map(|j| 1.0 / (j + 1) as f64).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|r| r / total).collect()
}

fn generate(cfg: &SweepConfig, eps: f64, k: f64, seed: u64) -> Result<LabeledDataset> {
    let d = cfg.d;
    match cfg.generator {
        SweepGenerator::Gaussian | SweepGenerator::BoundedMoments => {
            let far = vec![5.0; d];
            gen_bounded_moments(cfg.n, d, eps, 1.0, k, &Adversary::PointMass(far), seed)
        }
        SweepGenerator::DistTuples => {
            if !(k >= 1.0 && k.fract() == 0.0 && k.is_finite()) {
                return Err(Error::InvalidConfig(format!("tuple size k = {k} must be a positive integer")));
            }
            if d < 2 {
                return Err(Error::InvalidConfig("dist-tuples needs d >= 2 atoms".into()));
            }
            // moves mass from the likeliest to the rarest atom, 1 / sqrt(eps k) in l1
            let mut delta = vec![0.0; d];
            let size = 0.5 / (eps.max(1e-12) * k).sqrt();
            delta[0] = -size;
            delta[d - 1] = size;
            gen_dist_tuples(&skewed_pi(d), k as usize, cfg.n, eps, &Adversary::ClusterShift(delta), seed)
        }
    }
}

fn run_trial(cfg: &SweepConfig, cell: usize, eps: f64, k: f64, trial: usize, seed: u64) -> Result<RunRecord> {
    let ds = generate(cfg, eps, k, seed)?;
    let (spec, vertex_mode) = NormArg::parse(&cfg.norm)?.spec(cfg.d)?;
    let est_cfg = EstimatorConfig { vertex_mode, seed, ..EstimatorConfig::with_mode(cfg.mode) };
    let alpha = 1.0 - eps;
    let start = Instant::now();
    let rep = match cfg.sigma {
        Some(s) => recover_mean(&ds.points, alpha, s, &spec, &est_cfg)?,
        None => recover_mean_auto(&ds.points, alpha, None, &spec, &est_cfg)?,
    };
    let seconds = if cfg.no_timing { 0.0 } else { start.elapsed().as_secs_f64() };
    let est = DVector::from_vec(rep.estimate.clone().ok_or_else(|| Error::InvalidInput("no point estimate".into()))?);
    let mu = &ds.true_center;
    let error = norm_eval_mode((&est - mu).as_slice(), &spec, vertex_mode)?;
    let naive = linalg::column_mean(&ds.points);
    let naive_error = norm_eval_mode((&naive - mu).as_slice(), &spec, vertex_mode)?;
    let tv_error = (cfg.generator == SweepGenerator::DistTuples).then(|| tv_distance(est.as_slice(), mu.as_slice()));
    Ok(RunRecord {
        cell,
        eps,
        k,
        trial,
        seed,
        error,
        naive_error,
        tv_error,
        seconds,
        mode: rep.mode,
        sigma_used: rep.sigma_used,
        iterations: rep.iterations,
    })
}

/// Runs every (cell, trial) in the worker pool. Records come back in (cell, trial) order.
pub fn run_sweep(cfg: &SweepConfig) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    let jobs: Vec<(usize, f64, f64, usize)> = cfg
        .cells()
        .into_iter()
        .enumerate()
        .flat_map(|(c, (e, k))| (0..cfg.trials).map(move |t| (c, e, k, t)))
        .collect();
    pool()?.install(|| {
        jobs.par_iter()
            .map(|&(c, e, k, t)| run_trial(cfg, c, e, k, t, cell_seed(cell_seed(cfg.seed, c as u64), t as u64)))
            .collect()
    })
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        0.5 * (s[m - 1] + s[m])
    }
}

pub fn summarize(cfg: &SweepConfig, records: &[RunRecord]) -> SweepSummary {
    let cells: Vec<CellSummary> = cfg
        .cells()
        .into_iter()
        .enumerate()
        .map(|(c, (eps, k))| {
            let mine: Vec<&RunRecord> = records.iter().filter(|r| r.cell == c).collect();
            let errs: Vec<f64> = mine.iter().map(|r| r.error).collect();
            let tvs: Vec<f64> = mine.iter().filter_map(|r| r.tv_error).collect();
            CellSummary { cell: c, eps, k, median_error: median(&errs), median_tv: (!tvs.is_empty()).then(|| median(&tvs)) }
        })
        .collect();
    let mut ks: Vec<f64> = cells.iter().map(|c| c.k).collect();
    ks.sort_by(f64::total_cmp);
    ks.dedup();
    let monotone_in_eps = ks
        .iter()
        .map(|&k| {
            let along: Vec<f64> = cells.iter().filter(|c| c.k == k).map(|c| c.median_error).collect();
            MonotoneCheck { k, monotone: along.windows(2).all(|w| w[1] >= w[0]) }
        })
        .collect();
    let k_ratios = cfg
        .eps
        .iter()
        .map(|&e| {
            let along: Vec<f64> = cells.iter().filter(|c| c.eps == e).map(|c| c.median_tv.unwrap_or(c.median_error)).collect();
            (e, along.windows(2).map(|w| w[0] / w[1]).collect())
        })
        .collect();
    SweepSummary { cells, monotone_in_eps, k_ratios }
}

pub fn records_to_csv(records: &[RunRecord]) -> Result<String> {
    let mut w = csv_with_schema("bench")?;
    w.write_record([
        "cell", "eps", "k", "trial", "seed", "error", "naive_error", "tv_error", "seconds", "mode", "sigma_used", "iterations",
    ])?;
    for r in records {
        let mode = serde_json::to_value(r.mode)?.as_str().unwrap_or_default().to_string();
        w.write_record([
            r.cell.to_string(),
            format!("{:?}", r.eps),
            format!("{:?}", r.k),
            r.trial.to_string(),
            r.seed.to_string(),
            format!("{:?}", r.error),
            format!("{:?}", r.naive_error),
            r.tv_error.map(|t| format!("{t:?}")).unwrap_or_default(),
            format!("{:?}", r.seconds),
            mode,
            format!("{:?}", r.sigma_used),
            r.iterations.to_string(),
        ])?;
    }
    finish_csv(w)
}
