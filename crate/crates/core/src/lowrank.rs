//! Robust rank-k recovery.
//!
//! The efficient path reweights points exactly like the mean estimator, with a ridge
//! reconstruction Q in place of W and a trace-one PSD weight Y on the residuals.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::meanest::{downweight, min_active_size, split_factored, Factored, WeightState};
use crate::norms::next_combination;
use crate::resilience::{rank_resilience_check, subset_size};

#[derive(Debug, Clone)]
pub struct RankKConfig {
    pub k: usize,
    pub delta: f64,
    /// sigma_{k+1}(X_S) / sqrt(|S|); `None` asks for doubling from a data-driven guess.
    pub sigma: Option<f64>,
    pub threshold: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub good_mask: Option<Vec<bool>>,
}

impl RankKConfig {
    pub fn new(k: usize, delta: f64) -> Self {
        RankKConfig { k, delta, sigma: None, threshold: 0.9, max_iter: 500, tol: 1e-6, good_mask: None }
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = Some(sigma);
        self
    }

    /// Ridge weight with lambda * k = (1 - delta) n sigma^2.
    pub fn lambda(&self, n: usize, sigma: f64) -> f64 {
        (1.0 - self.delta) * n as f64 * sigma * sigma / self.k as f64
    }

    fn validate(&self, d: usize) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidConfig("k must be positive".into()));
        }
        if !(0.0..=1.0 / 3.0 + 1e-12).contains(&self.delta) {
            return Err(Error::InvalidConfig(format!("delta = {} outside [0, 1/3]", self.delta)));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::InvalidConfig("split threshold must lie in (0, 1)".into()));
        }
        if let Some(s) = self.sigma {
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::InvalidConfig(format!("sigma = {s} must be positive")));
            }
        }
        if d == 0 {
            return Err(Error::InvalidInput("empty dimension".into()));
        }
        Ok(())
    }
}

struct Ridge {
    q: Factored,
    /// x_i - X q_i.
    residual: DMatrix<f64>,
    /// ||q_i||_2^2.
    q_sq: Vec<f64>,
}

fn ridge(x: &DMatrix<f64>, y: &DMatrix<f64>, lambda: f64, c: &[f64]) -> Ridge {
    let m = x.ncols();
    let b = linalg::psd_sqrt(y) * x;
    let (vals, vecs) = linalg::sym_eigen_desc(&(&b * b.transpose()));
    let top = vals.iter().copied().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..vals.len()).filter(|&j| vals[j] > 1e-14 * top && vals[j] > 0.0).collect();
    let r = keep.len();
    // right singular vectors of Y^{1/2} X
    let mut v = DMatrix::zeros(m, r);
    for (col, &j) in keep.iter().enumerate() {
        let s = vals[j].sqrt();
        v.set_column(col, &(b.transpose() * vecs.column(j) / s));
    }
    let mut coef = DMatrix::zeros(r, m);
    let mut q_sq = vec![0.0; m];
    for i in 0..m {
        for (col, &j) in keep.iter().enumerate() {
            let g = c[i] * vals[j];
            let h = g / (g + lambda);
            coef[(col, i)] = h * v[(i, col)];
            q_sq[i] += coef[(col, i)] * coef[(col, i)];
        }
    }
    let residual = x - (x * &v) * &coef;
    Ridge { q: Factored { left: v, right: coef.transpose() }, residual, q_sq }
}

/// Columnwise minimizer of c_i (x_i - X q_i)^T Y (x_i - X q_i) + lambda ||q_i||^2.
pub fn ridge_response(x: &DMatrix<f64>, y: &DMatrix<f64>, lambda: f64, c: &[f64]) -> Result<DMatrix<f64>> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidConfig(format!("lambda = {lambda} must be positive")));
    }
    if c.len() != x.ncols() || y.nrows() != x.nrows() || y.ncols() != x.nrows() {
        return Err(Error::InvalidInput("shape mismatch in ridge response".into()));
    }
    Ok(ridge(x, y, lambda, c).q.to_dense())
}

struct Saddle {
    ridge: Ridge,
    y: DMatrix<f64>,
    value: f64,
    upper: f64,
    stalled: bool,
}

fn weighted_gram(residual: &DMatrix<f64>, c: &[f64]) -> DMatrix<f64> {
    let mut scaled = residual.clone();
    for (i, &ci) in c.iter().enumerate() {
        scaled.column_mut(i).scale_mut(ci);
    }
    linalg::symmetrize(&(&scaled * residual.transpose()))
}

/// Frank-Wolfe over trace-one PSD Y, stopping early once the value is known to lie on
/// one side of `threshold`.
fn saddle(x: &DMatrix<f64>, c: &[f64], lambda: f64, threshold: f64, cfg: &RankKConfig) -> Saddle {
    let d = x.nrows();
    let mut y = DMatrix::identity(d, d) / d as f64;
    let mut upper = f64::INFINITY;
    let mut best: Option<(f64, Ridge, DMatrix<f64>)> = None;
    let mut stalled = true;
    for t in 0..cfg.max_iter.max(1) {
        let r = ridge(x, &y, lambda, c);
        let penalty: f64 = lambda * r.q_sq.iter().sum::<f64>();
        let g = weighted_gram(&r.residual, c);
        let value = (&g * &y).trace() + penalty;
        let (top, dir) = linalg::top_eigenpair(&g);
        upper = upper.min(top.max(0.0) + penalty);
        let improved = best.as_ref().is_none_or(|b| value > b.0);
        if improved {
            best = Some((value, r, y.clone()));
        }
        let best_value = best.as_ref().map(|b| b.0).unwrap_or(value);
        if best_value > threshold || upper <= threshold || upper - best_value <= cfg.tol * upper.abs() {
            stalled = false;
            break;
        }
        let step = 2.0 / (t as f64 + 2.0);
        y = &y * (1.0 - step) + (&dir * dir.transpose()) * step;
    }
    let (value, ridge, y) = best.expect("at least one iterate");
    Saddle { ridge, y, value, upper: upper.max(value), stalled }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankKReport {
    /// X_A Q0 X_A^+, d x d, not an orthogonal projection in general.
    #[serde(skip)]
    pub p: DMatrix<f64>,
    /// Orthogonal projector onto the column space of `p`.
    #[serde(skip)]
    pub projector: DMatrix<f64>,
    pub rank: usize,
    pub rank_q0: usize,
    /// ||(I - P) X_A||_2 on the final active set.
    pub residual_spectral: f64,
    pub residual_projector: f64,
    pub k: usize,
    pub delta: f64,
    pub sigma: f64,
    pub lambda: f64,
    pub q_frobenius_sq: f64,
    pub final_objective: f64,
    /// Certified upper bound on the last saddle value.
    pub objective_upper: f64,
    /// ||(I - P) X_S||_2 on the good columns when a mask is supplied.
    pub residual_good: Option<f64>,
    pub iterations: usize,
    pub active: Vec<usize>,
    pub weights: Vec<f64>,
    pub stalled: bool,
}

impl RankKReport {
    pub fn sidecar(&self) -> serde_json::Value {
        serde_json::json!({
            "rank": self.rank,
            "residual_spectral": self.residual_spectral,
            "k": self.k,
            "delta": self.delta,
            "sigma": self.sigma,
        })
    }
}

/// ||(I - P) X||_2.
pub fn projection_residual(p: &DMatrix<f64>, x: &DMatrix<f64>) -> f64 {
    linalg::spectral_norm(&(x - p * x))
}

fn column_space_projector(p: &DMatrix<f64>) -> DMatrix<f64> {
    let d = p.nrows();
    let svd = p.clone().svd(true, false);
    let u = svd.u.expect("u requested");
    let top = svd.singular_values.max();
    if top == 0.0 {
        return DMatrix::zeros(d, d);
    }
    let tol = linalg::rank_tol(p, top);
    let mut out = DMatrix::zeros(d, d);
    for (j, &s) in svd.singular_values.iter().enumerate() {
        if s > tol {
            out += u.column(j) * u.column(j).transpose();
        }
    }
    out
}

/// Reweighting loop with threshold 8 n sigma^2 and a ridge reconstruction split at
/// `cfg.threshold`.
pub fn recover_rank_k(data: &DMatrix<f64>, cfg: &RankKConfig) -> Result<RankKReport> {
    let (d, n) = data.shape();
    cfg.validate(d)?;
    if n == 0 || data.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("data must be nonempty and finite".into()));
    }
    let sigma = cfg.sigma.ok_or_else(|| Error::InvalidConfig("sigma is required; use recover_rank_k_auto".into()))?;
    if let Some(mask) = &cfg.good_mask {
        if mask.len() != n {
            return Err(Error::InvalidInput("good mask length mismatch".into()));
        }
    }
    let lambda = cfg.lambda(n, sigma);
    let threshold = 8.0 * n as f64 * sigma * sigma;
    let floor = min_active_size(1.0 - cfg.delta, n);
    let mut state = WeightState::new(n);
    let mut stalled = false;
    for iteration in 0..=n {
        let active = state.active();
        if (active.len() as f64) < floor - 1e-9 {
            return Err(Error::PromiseViolated(format!(
                "active set {} fell below {floor:.2}; sigma may be too small",
                active.len()
            )));
        }
        let x_a = linalg::select_columns(data, &active);
        let c_a: Vec<f64> = active.iter().map(|&i| state.c[i]).collect();
        let sol = saddle(&x_a, &c_a, lambda, threshold, cfg);
        stalled |= sol.stalled;
        if sol.value > threshold {
            let yr = &sol.y * &sol.ridge.residual;
            let mut tau = vec![0.0; n];
            for (j, &i) in active.iter().enumerate() {
                let fit = sol.ridge.residual.column(j).dot(&yr.column(j)).max(0.0);
                tau[i] = fit + lambda * sol.ridge.q_sq[j] / c_a[j];
            }
            state = downweight(&state, &tau)?;
            continue;
        }
        let split = split_factored(&sol.ridge.q, cfg.threshold)?;
        let left = &x_a * &split.w0.left;
        let p = left * (split.w0.right.transpose() * linalg::pinv(&x_a));
        let projector = column_space_projector(&p);
        let residual_good = cfg.good_mask.as_ref().map(|mask| {
            let good: Vec<usize> = (0..n).filter(|&i| mask[i]).collect();
            projection_residual(&p, &linalg::select_columns(data, &good))
        });
        return Ok(RankKReport {
            rank: linalg::numerical_rank(&p),
            rank_q0: split.rank_w0,
            residual_spectral: projection_residual(&p, &x_a),
            residual_projector: projection_residual(&projector, &x_a),
            p,
            projector,
            k: cfg.k,
            delta: cfg.delta,
            sigma,
            lambda,
            q_frobenius_sq: sol.ridge.q_sq.iter().sum(),
            final_objective: sol.value,
            objective_upper: sol.upper,
            residual_good,
            iterations: iteration + 1,
            active,
            weights: state.c.clone(),
            stalled,
        });
    }
    Err(Error::PromiseViolated("outer loop did not terminate".into()))
}

/// sigma_{k+1}(X) / sqrt(n) of the whole data, floored relative to the top singular value.
pub fn initial_rank_sigma(data: &DMatrix<f64>, k: usize) -> f64 {
    let n = data.ncols().max(1) as f64;
    let s = linalg::singular_values(data);
    let top = s.first().copied().unwrap_or(0.0);
    let tail = s.get(k).copied().unwrap_or(0.0);
    let floor = 1e-6 * top / n.sqrt();
    let guess = (tail / n.sqrt()).max(floor);
    if guess > 0.0 {
        guess
    } else {
        f64::EPSILON
    }
}

/// Doubles sigma from `cfg.sigma` or the data-driven guess until the loop succeeds.
pub fn recover_rank_k_auto(data: &DMatrix<f64>, cfg: &RankKConfig) -> Result<RankKReport> {
    let mut sigma = cfg.sigma.unwrap_or_else(|| initial_rank_sigma(data, cfg.k));
    for _ in 0..64 {
        let mut attempt = cfg.clone();
        attempt.sigma = Some(sigma);
        match recover_rank_k(data, &attempt) {
            Err(Error::PromiseViolated(_)) | Err(Error::NoProgress) => sigma *= 2.0,
            other => return other,
        }
    }
    Err(Error::PromiseViolated("sigma doubling did not terminate".into()))
}

#[derive(Debug, Clone)]
pub struct OracleResult {
    /// Projection onto the top-k left singular vectors of the winning subset.
    pub p: DMatrix<f64>,
    pub subset: Vec<usize>,
    pub sigma_k1: f64,
    /// False when no subset passed the rank-resilience check and the winner is best effort.
    pub resilient: bool,
    pub subsets_checked: usize,
}

impl OracleResult {
    pub fn flag(&self) -> Option<Error> {
        (!self.resilient).then_some(Error::NoResilientSubset)
    }
}

fn top_k_projector(x: &DMatrix<f64>, k: usize) -> (DMatrix<f64>, f64) {
    let d = x.nrows();
    let (vals, vecs) = linalg::sym_eigen_desc(&(x * x.transpose()));
    let kk = k.min(d);
    let u = vecs.columns(0, kk).into_owned();
    let next = if k < d { vals[k].max(0.0).sqrt() } else { 0.0 };
    (&u * u.transpose(), next)
}

fn log_binomial(n: usize, k: usize) -> f64 {
    (0..k).map(|i| ((n - i) as f64 / (i + 1) as f64).ln()).sum()
}

/// Among size-(1 - delta)n subsets that are delta/(1 - delta)-rank-resilient, the one with
/// the smallest sigma_{k+1}; returns the projector onto its top-k left singular vectors.
pub fn best_rank_k_oracle(data: &DMatrix<f64>, k: usize, delta: f64, cap: usize) -> Result<OracleResult> {
    let (d, n) = data.shape();
    if n == 0 || d == 0 || data.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("data must be nonempty and finite".into()));
    }
    if k == 0 {
        return Err(Error::InvalidConfig("k must be positive".into()));
    }
    if !(0.0..0.5).contains(&delta) {
        return Err(Error::InvalidConfig(format!("delta = {delta} outside [0, 1/2)")));
    }
    let m = subset_size(n, 1.0 - delta).max(1);
    let count = log_binomial(n, m).exp().round();
    if count > cap as f64 {
        return Err(Error::TooManySubsets { count, cap });
    }
    let inner_delta = delta / (1.0 - delta);
    let mut ranked: Vec<(f64, Vec<usize>)> = Vec::new();
    let mut c: Vec<usize> = (0..m).collect();
    loop {
        let (_, next) = top_k_projector(&linalg::select_columns(data, &c), k);
        ranked.push((next, c.clone()));
        if !next_combination(&mut c, n) {
            break;
        }
    }
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut checked = 0;
    for (sigma_k1, subset) in &ranked {
        checked += 1;
        let xs = linalg::select_columns(data, subset);
        if rank_resilience_check(&xs, inner_delta, cap)?.holds {
            let (p, _) = top_k_projector(&xs, k);
            return Ok(OracleResult { p, subset: subset.clone(), sigma_k1: *sigma_k1, resilient: true, subsets_checked: checked });
        }
    }
    let (sigma_k1, subset) = ranked.swap_remove(0);
    let (p, _) = top_k_projector(&linalg::select_columns(data, &subset), k);
    Ok(OracleResult { p, subset, sigma_k1, resilient: false, subsets_checked: checked })
}

/// sigma_{k+1} of a column block, 0 when k >= rank.
pub fn sigma_k_plus_1(x: &DMatrix<f64>, k: usize) -> f64 {
    linalg::singular_values(x).get(k).copied().unwrap_or(0.0)
}
