//! Efficient robust mean estimation by reconstruction and downweighting.
//!
//! Each point is reconstructed from the others; points that cannot be, in the
//! dual-weighted sense of a semidefinite matrix Y, are downweighted. When the
//! reconstruction error is small the low-rank part of the reconstruction matrix
//! carries the answer.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, ThinSvd};
use crate::norms::{capped_simplex_project, conjugate_exponent, support_vertices, NormSpec, ResolvedNorm, SupportSet, VertexMode};
use crate::quadratic;
use crate::resilience::Candidate;

/// Largest dual-ball vertex count the oracle will enumerate.
pub const ORACLE_VERTEX_CAP: usize = 1 << 14;

/// Output of the kappa-approximate quadratic maximization oracle.
#[derive(Debug, Clone)]
pub struct KappaResult {
    /// Maximizer in the relaxed feasible set.
    pub y: DMatrix<f64>,
    /// <G, Y>.
    pub value: f64,
    /// Certified upper bound on the relaxed maximum.
    pub upper: f64,
    /// Best value of v^T G v over the dual ball found by rounding or search.
    pub lower: f64,
    pub kappa: f64,
}

fn check_psd(g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if g.nrows() != g.ncols() {
        return Err(Error::InvalidInput("oracle matrix must be square".into()));
    }
    if g.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("non-finite oracle matrix".into()));
    }
    let sym = linalg::symmetrize(g);
    if sym.nrows() == 0 {
        return Ok(sym);
    }
    let (vals, _) = linalg::sym_eigen_desc(&sym);
    let min = vals[vals.len() - 1];
    if min < -1e-9 * vals[0].abs().max(1.0) {
        return Err(Error::InvalidInput(format!("matrix is not PSD (eigenvalue {min})")));
    }
    Ok(sym)
}

/// Approximation factor of the oracle for this norm and dimension.
pub fn kappa_for(spec: &NormSpec, mode: VertexMode, d: usize) -> Result<f64> {
    Ok(Lmo::new(spec, mode, d, 0)?.kappa())
}

/// Linear maximization over the relaxed set, reused across Frank-Wolfe steps.
pub(crate) enum Lmo {
    L2,
    Vertices(Vec<DVector<f64>>),
    Sdp { q: f64, warm: Option<DMatrix<f64>>, rng: ChaCha8Rng },
}

impl Lmo {
    pub(crate) fn new(spec: &NormSpec, mode: VertexMode, d: usize, seed: u64) -> Result<Self> {
        let resolved = spec.resolve(mode);
        let sdp = |q: f64| Lmo::Sdp { q, warm: None, rng: ChaCha8Rng::seed_from_u64(seed) };
        match resolved {
            ResolvedNorm::L2 => Ok(Lmo::L2),
            ResolvedNorm::Lp { p } => Ok(sdp(conjugate_exponent(p))),
            ResolvedNorm::L1 | ResolvedNorm::TopK { .. } => match support_vertices(spec, d, mode, ORACLE_VERTEX_CAP) {
                Ok(SupportSet::Vertices(vs)) => Ok(Lmo::Vertices(vs.into_iter().map(DVector::from_vec).collect())),
                Ok(SupportSet::NotPolyhedral) => unreachable!("polyhedral norm"),
                Err(Error::TooManyVertices { .. }) if resolved == ResolvedNorm::L1 => Ok(sdp(f64::INFINITY)),
                Err(Error::TooManyVertices { count, .. }) => Err(Error::InvalidConfig(format!(
                    "top-k dual ball has {count} vertices; no relaxation with bounded ratio is available"
                ))),
                Err(e) => Err(e),
            },
        }
    }

    pub(crate) fn kappa(&self) -> f64 {
        match self {
            Lmo::L2 | Lmo::Vertices(_) => 1.0,
            Lmo::Sdp { .. } => std::f64::consts::FRAC_PI_2,
        }
    }

    /// (Y, <G, Y>, certified upper bound on max over the set).
    pub(crate) fn solve(&mut self, g: &DMatrix<f64>) -> (DMatrix<f64>, f64, f64) {
        let d = g.nrows();
        match self {
            Lmo::L2 => {
                let (val, v) = linalg::top_eigenpair(g);
                let val = val.max(0.0);
                (&v * v.transpose(), val, val)
            }
            Lmo::Vertices(vs) => {
                let mut best = (f64::NEG_INFINITY, 0);
                for (j, v) in vs.iter().enumerate() {
                    let val = quadratic::quad(g, v);
                    if val > best.0 {
                        best = (val, j);
                    }
                }
                let v = &vs[best.1];
                (v * v.transpose(), best.0.max(0.0), best.0.max(0.0))
            }
            Lmo::Sdp { q, warm, rng } => {
                if g.iter().all(|&x| x == 0.0) {
                    let mut y = DMatrix::zeros(d, d);
                    y[(0, 0)] = 1.0;
                    return (y, 0.0, 0.0);
                }
                let start = warm
                    .clone()
                    .unwrap_or_else(|| DMatrix::from_fn(d, d, |_, _| StandardNormal.sample(rng)));
                let (value, r) = quadratic::solve_factored(g, *q, start);
                let y = &r * r.transpose();
                let upper = quadratic::certify(g, &y, *q).max(value);
                *warm = Some(r);
                (y, value, upper)
            }
        }
    }
}

/// kappa-approximate maximization of <G, Y> over the relaxed set of the norm's dual ball.
pub fn kappa_oracle(g: &DMatrix<f64>, spec: &NormSpec, mode: VertexMode, seed: u64) -> Result<KappaResult> {
    let g = check_psd(g)?;
    let d = g.nrows();
    if d == 0 {
        return Err(Error::InvalidInput("empty oracle matrix".into()));
    }
    let mut lmo = Lmo::new(spec, mode, d, seed)?;
    let kappa = lmo.kappa();
    match lmo {
        Lmo::Sdp { q, .. } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let lower = quadratic::max_quadratic_lq(&g, q, 256, &mut rng);
            let sol = quadratic::sdp_relaxation(&g, q, Some(&lower.vector), &mut rng);
            Ok(KappaResult {
                value: sol.value.max(lower.value),
                upper: sol.upper.max(lower.value),
                lower: lower.value.max(0.0),
                y: sol.y,
                kappa,
            })
        }
        _ => {
            let (y, value, upper) = lmo.solve(&g);
            Ok(KappaResult { y, value, upper, lower: value, kappa })
        }
    }
}

/// Optimal allocation for min_w max_j lambda_j (1 - w_j) subject to sum_j w_j^2 <= budget.
pub fn water_fill(lambda: &[f64], budget: f64) -> Result<(Vec<f64>, f64)> {
    if !(budget >= 0.0) || lambda.iter().any(|&l| !(l >= 0.0) || !l.is_finite()) {
        return Err(Error::InvalidInput("water_fill needs nonnegative finite inputs".into()));
    }
    let m = lambda.len();
    if m == 0 {
        return Ok((Vec::new(), 0.0));
    }
    if budget >= m as f64 {
        return Ok((vec![1.0; m], 0.0));
    }
    let weights = |t: f64| -> Vec<f64> {
        lambda.iter().map(|&l| if l > 0.0 { (1.0 - t / l).max(0.0) } else { 0.0 }).collect()
    };
    let used = |t: f64| -> f64 { weights(t).iter().map(|w| w * w).sum() };
    let top = lambda.iter().cloned().fold(0.0, f64::max);
    let (mut lo, mut hi) = (0.0, top);
    if used(0.0) <= budget {
        hi = 0.0;
    } else {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if used(mid) > budget {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-16 * top {
                break;
            }
        }
    }
    let w = weights(hi);
    let value = lambda.iter().zip(&w).map(|(l, w)| l * (1.0 - w)).fold(0.0, f64::max);
    Ok((w, value))
}

/// A matrix held as `left * right^T`.
#[derive(Debug, Clone)]
pub struct Factored {
    pub left: DMatrix<f64>,
    pub right: DMatrix<f64>,
}

impl Factored {
    pub fn dense(w: DMatrix<f64>) -> Self {
        let n = w.ncols();
        Factored { left: w, right: DMatrix::identity(n, n) }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        &self.left * self.right.transpose()
    }

    /// X * W without forming W.
    pub fn premultiply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        (x * &self.left) * self.right.transpose()
    }
}

#[derive(Debug, Clone)]
pub struct FastL2 {
    pub w: DMatrix<f64>,
    /// ||X - X W||_2.
    pub value: f64,
}

/// Centered data with its thin SVD.
struct CenteredSvd {
    centered: DMatrix<f64>,
    /// X' V = U diag(lambda), d x k.
    xv: DMatrix<f64>,
    /// Right singular vectors, m x k, orthogonal to the all-ones vector.
    v: DMatrix<f64>,
    lambda: Vec<f64>,
}

fn centered_svd(x: &DMatrix<f64>, y_half: Option<&DMatrix<f64>>) -> CenteredSvd {
    let mean = linalg::column_mean(x);
    let centered = linalg::center_columns(x, &mean);
    let b = match y_half {
        Some(h) => h * &centered,
        None => centered.clone(),
    };
    let gram = &b * b.transpose();
    let (vals, vecs) = linalg::sym_eigen_desc(&gram);
    let top = vals[0].max(0.0);
    let tol = top * 1e-13 * (b.ncols().max(b.nrows()) as f64) + f64::MIN_POSITIVE;
    let k = vals.iter().filter(|&&l| l > tol).count();
    let u = vecs.columns(0, k).into_owned();
    let lambda: Vec<f64> = vals.iter().take(k).map(|l| l.sqrt()).collect();
    let mut v = b.transpose() * &u;
    for (j, l) in lambda.iter().enumerate() {
        v.column_mut(j).scale_mut(1.0 / l);
    }
    let xv = &centered * &v;
    CenteredSvd { centered, xv, v, lambda }
}

/// The all-ones direction plus `v` scaled column-wise: W = P + V diag(w) V^T.
fn fast_factors(m: usize, v: &DMatrix<f64>, w: &[f64]) -> Factored {
    let k = v.ncols();
    let one = 1.0 / (m as f64).sqrt();
    let mut left = DMatrix::from_element(m, k + 1, one);
    let mut right = DMatrix::from_element(m, k + 1, one);
    for j in 0..k {
        left.set_column(j + 1, &v.column(j));
        right.set_column(j + 1, &(v.column(j) * w[j]));
    }
    Factored { left, right }
}

/// Solves min ||X - X W||_2 over column-stochastic W with ||W||_F^2 <= r by water-filling
/// the singular values of the centered data.
pub fn fast_l2_reconstruct(x: &DMatrix<f64>, r: f64) -> Result<FastL2> {
    if !(r >= 1.0) {
        return Err(Error::InvalidConfig(format!("r = {r} must be at least 1")));
    }
    if x.ncols() == 0 {
        return Err(Error::InvalidInput("no columns".into()));
    }
    let svd = centered_svd(x, None);
    let (w, value) = water_fill(&svd.lambda, r - 1.0)?;
    let f = fast_factors(x.ncols(), &svd.v, &w);
    Ok(FastL2 { w: f.to_dense(), value })
}

/// Configuration of the Frank-Wolfe saddle solvers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaddleConfig {
    pub max_iter: usize,
    pub tol: f64,
    /// Projected-gradient steps per best response in the capped-simplex solver.
    pub inner_iter: usize,
    pub mode: VertexMode,
    pub seed: u64,
}

impl Default for SaddleConfig {
    fn default() -> Self {
        SaddleConfig { max_iter: 2000, tol: 1e-5, inner_iter: 25, mode: VertexMode::Native, seed: 0 }
    }
}

/// Split W = W0-part + W1 at a singular-value threshold.
#[derive(Debug, Clone)]
pub struct Split {
    pub w0: Factored,
    pub w1: Factored,
    pub rank_w0: usize,
    /// max_j |(1^T W0)_j - 1|.
    pub column_sum_error: f64,
}

#[derive(Debug, Clone)]
pub struct SaddleSolution {
    pub w: Factored,
    pub y: DMatrix<f64>,
    /// min over W of the weighted reconstruction error at the returned Y.
    pub value: f64,
    /// Certified upper bound on the saddle value.
    pub upper: f64,
    pub split: Split,
    pub iterations: usize,
    pub stalled: bool,
}

pub(crate) fn split_factored(w: &Factored, threshold: f64) -> Result<Split> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidConfig(format!("split threshold {threshold} must lie in (0, 1)")));
    }
    let n = w.left.nrows();
    let svd = ThinSvd::of_product(&w.left, &w.right);
    let top = svd.s.first().copied().unwrap_or(0.0);
    let zero_tol = top * 1e-12;
    let big: Vec<usize> = (0..svd.s.len()).filter(|&j| svd.s[j] > threshold).collect();
    let small: Vec<usize> = (0..svd.s.len()).filter(|&j| svd.s[j] <= threshold && svd.s[j] > zero_tol).collect();
    let u0 = linalg::select_columns(&svd.u, &big);
    let v0 = linalg::select_columns(&svd.v, &big);
    let u1 = linalg::select_columns(&svd.u, &small);
    let v1 = linalg::select_columns(&svd.v, &small);
    let s0 = DMatrix::from_diagonal(&DVector::from_iterator(big.len(), big.iter().map(|&j| svd.s[j])));
    let s1 = DMatrix::from_diagonal(&DVector::from_iterator(small.len(), small.iter().map(|&j| svd.s[j])));
    // (I - U1 S1 V1^T)^{-1} = I + U1 (I - S1 V1^T U1)^{-1} S1 V1^T
    let k1 = small.len();
    let inner = DMatrix::identity(k1, k1) - &s1 * v1.transpose() * &u1;
    let inner_inv = inner
        .try_inverse()
        .ok_or_else(|| Error::InvalidInput("I - W1 is singular".into()))?;
    let g_t = {
        let g = &s0 * v0.transpose() + &s0 * (v0.transpose() * &u1) * inner_inv * &s1 * v1.transpose();
        g.transpose()
    };
    let ones = DVector::from_element(n, 1.0);
    let col_sums = (u0.transpose() * &ones).transpose() * g_t.transpose();
    let column_sum_error = col_sums.iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max);
    let rank_w0 = big.len();
    let w1_right = &v1 * &s1;
    Ok(Split { w0: Factored { left: u0, right: g_t }, w1: Factored { left: u1, right: w1_right }, rank_w0, column_sum_error })
}

/// W0 = (W - W1)(I - W1)^{-1} where W1 keeps the singular components at or below `threshold`.
pub fn low_rank_split(w: &DMatrix<f64>, threshold: f64) -> Result<(DMatrix<f64>, DMatrix<f64>, usize)> {
    if w.iter().any(|x| !x.is_finite()) || w.nrows() != w.ncols() {
        return Err(Error::InvalidInput("split needs a finite square matrix".into()));
    }
    let s = split_factored(&Factored::dense(w.clone()), threshold)?;
    Ok((s.w0.to_dense(), s.w1.to_dense(), s.rank_w0))
}

/// Best response of a saddle solver at a fixed Y.
struct BestResponse {
    w: Factored,
    /// Residuals x_i - X w_i, d x m.
    residual: DMatrix<f64>,
    /// Raw scores r_i^T Y r_i.
    tau: Vec<f64>,
}

fn scores(y: &DMatrix<f64>, residual: &DMatrix<f64>) -> Vec<f64> {
    let yr = y * residual;
    (0..residual.ncols()).map(|i| residual.column(i).dot(&yr.column(i)).max(0.0)).collect()
}

fn weighted_gram(residual: &DMatrix<f64>, c: &[f64]) -> DMatrix<f64> {
    let mut scaled = residual.clone();
    for (i, &ci) in c.iter().enumerate() {
        scaled.column_mut(i).scale_mut(ci);
    }
    linalg::symmetrize(&(&scaled * residual.transpose()))
}

/// Early exit of the outer loop's comparison: stop once the saddle value is known to be on
/// one side of the threshold.
#[derive(Debug, Clone, Copy)]
struct Decide {
    threshold: f64,
}

struct FwOutcome {
    br: BestResponse,
    y: DMatrix<f64>,
    value: f64,
    upper: f64,
    iterations: usize,
    stalled: bool,
}

/// Frank-Wolfe on the concave function Y -> min_W sum_i c_i r_i^T Y r_i.
fn frank_wolfe(
    d: usize,
    c: &[f64],
    lmo: &mut Lmo,
    cfg: &SaddleConfig,
    decide: Option<Decide>,
    mut best_response: impl FnMut(&DMatrix<f64>) -> BestResponse,
) -> FwOutcome {
    let value_of = |br: &BestResponse| -> f64 { br.tau.iter().zip(c).map(|(t, ci)| t * ci).sum() };
    // start from the oracle's answer for the plain centered residual
    let mut y = DMatrix::identity(d, d) / d as f64;
    let mut br = best_response(&y);
    let (y0, _, _) = lmo.solve(&weighted_gram(&br.residual, c));
    y = y0;
    br = best_response(&y);
    let mut value = value_of(&br);
    let mut upper = f64::INFINITY;
    let mut stalled = true;
    let mut iterations = 0;
    for t in 0..cfg.max_iter {
        iterations = t + 1;
        let grad = weighted_gram(&br.residual, c);
        let (atom, lin, cert) = lmo.solve(&grad);
        upper = upper.min(cert.max(value));
        let gap = lin - value;
        if gap <= cfg.tol * lin.abs().max(f64::MIN_POSITIVE) || upper - value <= cfg.tol * upper.abs() {
            stalled = false;
            break;
        }
        if let Some(dc) = decide {
            if value > dc.threshold || upper <= dc.threshold {
                stalled = false;
                break;
            }
        }
        let eta = 2.0 / (t as f64 + 2.0);
        y = &y * (1.0 - eta) + atom * eta;
        br = best_response(&y);
        value = value_of(&br);
    }
    FwOutcome { br, y, value, upper: upper.max(value), iterations, stalled }
}

/// Capped-simplex best response: every column w_i minimizes (e_i - w)^T H (e_i - w),
/// H = X^T Y X, over { 0 <= w <= cap, sum w = 1 }. Accelerated projected gradient,
/// warm-started from `prev`.
fn capped_best_response(x: &DMatrix<f64>, y: &DMatrix<f64>, cap: f64, iters: usize, prev: &mut DMatrix<f64>) -> BestResponse {
    let m = x.ncols();
    let half = linalg::psd_sqrt(y);
    let b = &half * x;
    let lip = 2.0 * linalg::spectral_norm(&b).powi(2);
    let project = |w: &DMatrix<f64>| -> DMatrix<f64> {
        let mut out = w.clone();
        for i in 0..m {
            let col: Vec<f64> = w.column(i).iter().copied().collect();
            let p = capped_simplex_project(&col, cap).expect("cap feasible");
            out.set_column(i, &DVector::from_vec(p));
        }
        out
    };
    let id = DMatrix::<f64>::identity(m, m);
    if lip > 0.0 {
        let mut w = prev.clone();
        let mut z = w.clone();
        let mut t = 1.0f64;
        for _ in 0..iters {
            let grad = (b.transpose() * (&b * (&z - &id))) * 2.0;
            let next = project(&(&z - grad / lip));
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            z = &next + (&next - &w) * ((t - 1.0) / t_next);
            w = next;
            t = t_next;
        }
        *prev = w;
    }
    let residual = x - x * &*prev;
    let tau = scores(y, &residual);
    BestResponse { w: Factored::dense(prev.clone()), residual, tau }
}

fn check_saddle_inputs(x: &DMatrix<f64>, c: &[f64], cap: f64) -> Result<()> {
    if x.ncols() == 0 || c.len() != x.ncols() {
        return Err(Error::InvalidInput("weights must match the columns".into()));
    }
    if x.iter().any(|v| !v.is_finite()) || c.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::InvalidInput("non-finite data or weights outside [0, 1]".into()));
    }
    if !(cap > 0.0) || cap * (x.ncols() as f64) < 1.0 - 1e-12 {
        return Err(Error::InfeasibleCap { cap, len: x.ncols() });
    }
    Ok(())
}

fn solution_from(outcome: FwOutcome) -> Result<SaddleSolution> {
    let split = split_factored(&outcome.br.w, 0.9)?;
    Ok(SaddleSolution {
        w: outcome.br.w,
        y: outcome.y,
        value: outcome.value.max(0.0),
        upper: outcome.upper.max(0.0),
        split,
        iterations: outcome.iterations,
        stalled: outcome.stalled,
    })
}

/// Frank-Wolfe over Y with capped-simplex best responses for W.
pub fn saddle_reconstruct(x_a: &DMatrix<f64>, c: &[f64], cap: f64, spec: &NormSpec, cfg: &SaddleConfig) -> Result<SaddleSolution> {
    check_saddle_inputs(x_a, c, cap)?;
    let mut lmo = Lmo::new(spec, cfg.mode, x_a.nrows(), cfg.seed)?;
    solution_from(capped_saddle(x_a, c, cap, &mut lmo, cfg, None))
}

fn capped_saddle(x: &DMatrix<f64>, c: &[f64], cap: f64, lmo: &mut Lmo, cfg: &SaddleConfig, decide: Option<Decide>) -> FwOutcome {
    let m = x.ncols();
    let mut prev = DMatrix::from_element(m, m, 1.0 / m as f64);
    frank_wolfe(x.nrows(), c, lmo, cfg, decide, |y| capped_best_response(x, y, cap, cfg.inner_iter, &mut prev))
}

/// Frobenius-relaxed best response: W = P + W~ with sum_i ||w~_i||^2 <= budget, each column a
/// ridge regression in the Y-geometry. The multiplier nu is found by bisection.
fn relaxed_best_response(x: &DMatrix<f64>, y: &DMatrix<f64>, c: &[f64], budget: f64) -> BestResponse {
    let m = x.ncols();
    let half = linalg::psd_sqrt(y);
    let svd = centered_svd(x, Some(&half));
    let k = svd.lambda.len();
    let l2: Vec<f64> = svd.lambda.iter().map(|l| l * l).collect();
    let shrink = |nu: f64, i: usize, j: usize| -> f64 {
        let a = c[i] * l2[j];
        if nu == 0.0 {
            1.0
        } else {
            a / (a + nu)
        }
    };
    let used = |nu: f64| -> f64 {
        let mut s = 0.0;
        for i in 0..m {
            for j in 0..k {
                let h = shrink(nu, i, j) * svd.v[(i, j)];
                s += h * h;
            }
        }
        s
    };
    let nu = if k == 0 || used(0.0) <= budget {
        0.0
    } else {
        let mut hi = l2[0].max(f64::MIN_POSITIVE);
        while used(hi) > budget {
            hi *= 4.0;
        }
        let mut lo = 0.0;
        for _ in 0..100 {
            let mid = if lo == 0.0 { hi / 1024.0 } else { (lo * hi).sqrt() };
            if used(mid) > budget {
                lo = mid;
            } else {
                hi = mid;
            }
            if lo > 0.0 && hi / lo < 1.0 + 1e-12 {
                break;
            }
        }
        hi
    };
    // right factor: column i of W~ is V (h_i o V^T e_i); store rows h_ij V_ij
    let mut coef = DMatrix::zeros(m, k);
    for i in 0..m {
        for j in 0..k {
            coef[(i, j)] = shrink(nu, i, j) * svd.v[(i, j)];
        }
    }
    // The SVD was taken in the Y^{1/2} geometry; the reconstruction uses X' V itself.
    let xv = &svd.centered * &svd.v;
    let residual = &svd.centered - &xv * coef.transpose();
    let one = 1.0 / (m as f64).sqrt();
    let mut left = DMatrix::from_element(m, k + 1, one);
    let mut right = DMatrix::from_element(m, k + 1, one);
    for j in 0..k {
        left.set_column(j + 1, &svd.v.column(j));
        right.set_column(j + 1, &coef.column(j));
    }
    let tau = scores(y, &residual);
    BestResponse { w: Factored { left, right }, residual, tau }
}

/// Frank-Wolfe over Y with the Frobenius relaxation ||W||_F^2 <= r of the capped simplex.
pub fn relaxed_saddle_reconstruct(x_a: &DMatrix<f64>, c: &[f64], r: f64, spec: &NormSpec, cfg: &SaddleConfig) -> Result<SaddleSolution> {
    if !(r >= 1.0) {
        return Err(Error::InvalidConfig(format!("r = {r} must be at least 1")));
    }
    check_saddle_inputs(x_a, c, 1.0)?;
    let mut lmo = Lmo::new(spec, cfg.mode, x_a.nrows(), cfg.seed)?;
    solution_from(relaxed_saddle(x_a, c, r, &mut lmo, cfg, None))
}

fn relaxed_saddle(x: &DMatrix<f64>, c: &[f64], r: f64, lmo: &mut Lmo, cfg: &SaddleConfig, decide: Option<Decide>) -> FwOutcome {
    frank_wolfe(x.nrows(), c, lmo, cfg, decide, |y| relaxed_best_response(x, y, c, r - 1.0))
}

/// Per-point weights with the active set derived on demand.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightState {
    pub c: Vec<f64>,
    pub tau: Vec<f64>,
}

impl WeightState {
    pub fn new(n: usize) -> Self {
        WeightState { c: vec![1.0; n], tau: vec![0.0; n] }
    }

    pub fn active(&self) -> Vec<usize> {
        (0..self.c.len()).filter(|&i| self.c[i] >= 0.5).collect()
    }
}

/// c_i <- c_i (1 - tau_i / tau_max) on the active set.
pub fn downweight(state: &WeightState, tau: &[f64]) -> Result<WeightState> {
    if tau.len() != state.c.len() {
        return Err(Error::InvalidInput("score length mismatch".into()));
    }
    if tau.iter().any(|&t| !(t >= 0.0) || !t.is_finite()) {
        return Err(Error::InvalidInput("scores must be finite and nonnegative".into()));
    }
    let active = state.active();
    let tau_max = active.iter().map(|&i| tau[i]).fold(0.0, f64::max);
    if tau_max <= 0.0 {
        return Err(Error::NoProgress);
    }
    let mut c = state.c.clone();
    for &i in &active {
        c[i] = (c[i] * (1.0 - tau[i] / tau_max)).max(0.0);
    }
    Ok(WeightState { c, tau: tau.to_vec() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EstimatorMode {
    #[serde(rename = "fast-l2")]
    FastL2,
    #[serde(rename = "saddle-l2")]
    SaddleL2,
    #[serde(rename = "general")]
    GeneralNorm,
}

impl EstimatorMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "fast-l2" => Ok(EstimatorMode::FastL2),
            "saddle-l2" => Ok(EstimatorMode::SaddleL2),
            "general" => Ok(EstimatorMode::GeneralNorm),
            other => Err(Error::InvalidConfig(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EstimatorConfig {
    pub mode: EstimatorMode,
    pub vertex_mode: VertexMode,
    pub saddle: SaddleConfig,
    /// Active-set sizes up to this use the capped-simplex solver; larger ones the Frobenius relaxation.
    pub dense_limit: usize,
    /// Known good set, used only to record the downweighting invariants.
    pub good_mask: Option<Vec<bool>>,
    pub seed: u64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            mode: EstimatorMode::FastL2,
            vertex_mode: VertexMode::Native,
            saddle: SaddleConfig::default(),
            dense_limit: 100,
            good_mask: None,
            seed: 0,
        }
    }
}

impl EstimatorConfig {
    pub fn with_mode(mode: EstimatorMode) -> Self {
        EstimatorConfig { mode, ..Default::default() }
    }
}

/// One downweighting step seen from the planted good set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantRecord {
    pub iteration: usize,
    pub objective: f64,
    /// sum over the active good points of c_i tau_i.
    pub good_score: f64,
    /// Objective >= 4a and good_score <= alpha a.
    pub precondition: bool,
    /// sum_S (1 - c_i) <= (alpha / 4) sum_all (1 - c_i), after the step.
    pub invariant_i: bool,
    /// |S n A| >= alpha (2 + alpha) / (4 - alpha) n, after the step.
    pub invariant_ii: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub estimate: Option<Vec<f64>>,
    pub candidates: Option<Vec<Candidate>>,
    pub iterations: usize,
    pub final_objective: f64,
    pub mode: EstimatorMode,
    pub sigma_used: f64,
    pub kappa_used: f64,
    pub rank_w0: usize,
    pub active: Vec<usize>,
    pub weights: Vec<f64>,
    pub stalled: bool,
    pub invariant_trace: Vec<InvariantRecord>,
}

/// Reconstruction of the active set at the current weights.
struct Recon {
    objective: f64,
    tau: Vec<f64>,
    w: Factored,
    stalled: bool,
}

fn reconstruct(
    x: &DMatrix<f64>,
    c: &[f64],
    cap: f64,
    threshold: f64,
    lmo: &mut Lmo,
    cfg: &EstimatorConfig,
) -> Result<Recon> {
    let m = x.ncols();
    let r = (cap * m as f64).max(1.0);
    let decide = Some(Decide { threshold });
    match cfg.mode {
        EstimatorMode::FastL2 => {
            let svd = centered_svd(x, None);
            let (w, _) = water_fill(&svd.lambda, r - 1.0)?;
            let f = fast_factors(m, &svd.v, &w);
            let mut scaled_w = svd.xv.clone();
            for (j, wj) in w.iter().enumerate() {
                scaled_w.column_mut(j).scale_mut(*wj);
            }
            let residual = &svd.centered - scaled_w * svd.v.transpose();
            let (y, objective, _) = Lmo::L2.solve(&weighted_gram(&residual, c));
            Ok(Recon { objective, tau: scores(&y, &residual), w: f, stalled: false })
        }
        EstimatorMode::SaddleL2 | EstimatorMode::GeneralNorm => {
            let out = if m <= cfg.dense_limit {
                capped_saddle(x, c, cap, lmo, &cfg.saddle, decide)
            } else {
                relaxed_saddle(x, c, r, lmo, &cfg.saddle, decide)
            };
            Ok(Recon { objective: out.value, tau: out.br.tau, w: out.br.w, stalled: out.stalled })
        }
    }
}

/// Single-linkage clusters of the columns at the given radius, largest first.
fn single_linkage(z: &DMatrix<f64>, radius: f64, norm: &ResolvedNorm) -> Vec<Vec<usize>> {
    let m = z.ncols();
    let mut parent: Vec<usize> = (0..m).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for i in 0..m {
        for j in (i + 1)..m {
            let diff = z.column(i) - z.column(j);
            if norm.eval(diff.as_slice()) <= radius {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for i in 0..m {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().push(i);
    }
    let mut out: Vec<Vec<usize>> = groups.into_values().collect();
    out.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
    out
}

/// Minimum active-set size allowed by the downweighting invariant.
pub fn min_active_size(alpha: f64, n: usize) -> f64 {
    alpha * (2.0 + alpha) / (4.0 - alpha) * n as f64
}

/// Capped-simplex cap for the reconstruction weights.
pub fn reconstruction_cap(alpha: f64, n: usize) -> f64 {
    (4.0 - alpha) / (alpha * (2.0 + alpha) * n as f64)
}

/// Robust mean (alpha >= 3/4) or candidate list (smaller alpha) by reconstruction and
/// downweighting. `sigma` bounds the good set's variance in the chosen norm.
pub fn recover_mean(data: &DMatrix<f64>, alpha: f64, sigma: f64, spec: &NormSpec, cfg: &EstimatorConfig) -> Result<EstimateReport> {
    let (d, n) = data.shape();
    if n == 0 || d == 0 || data.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("data must be nonempty and finite".into()));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidConfig(format!("alpha = {alpha} outside (0, 1]")));
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidConfig(format!("sigma = {sigma} must be positive")));
    }
    spec.validate()?;
    if cfg.mode != EstimatorMode::GeneralNorm && spec.resolve(cfg.vertex_mode) != ResolvedNorm::L2 {
        return Err(Error::InvalidConfig("l2 modes need the Euclidean norm".into()));
    }
    if let Some(mask) = &cfg.good_mask {
        if mask.len() != n {
            return Err(Error::InvalidInput("good mask length mismatch".into()));
        }
    }
    let mut lmo = Lmo::new(spec, cfg.vertex_mode, d, cfg.seed)?;
    let kappa = lmo.kappa();
    let a = kappa * n as f64 * sigma * sigma;
    let threshold = 4.0 * a;
    let cap = reconstruction_cap(alpha, n);
    let floor = min_active_size(alpha, n);
    let mut state = WeightState::new(n);
    let mut trace = Vec::new();
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
        let recon = reconstruct(&x_a, &c_a, cap, threshold, &mut lmo, cfg)?;
        stalled |= recon.stalled;
        if recon.objective > threshold {
            let mut tau = vec![0.0; n];
            for (k, &i) in active.iter().enumerate() {
                tau[i] = recon.tau[k];
            }
            let next = downweight(&state, &tau)?;
            if let Some(mask) = &cfg.good_mask {
                trace.push(invariant_record(iteration, &state, &next, &tau, mask, alpha, a, recon.objective));
            }
            state = next;
            continue;
        }
        let split = split_factored(&recon.w, 0.9)?;
        let z = split.w0.premultiply(&x_a);
        let (estimate, candidates) = if alpha >= 0.75 {
            (Some(linalg::column_mean(&x_a).iter().copied().collect()), None)
        } else {
            let gamma = spec.gamma().unwrap_or(1.0);
            let radius = 2.0 * kappa.sqrt() * sigma / (gamma.sqrt() * alpha);
            let clusters = single_linkage(&z, radius, &spec.resolve(cfg.vertex_mode));
            let keep: Vec<Vec<usize>> = clusters.into_iter().take(split.rank_w0 + 1).collect();
            let mass: usize = keep.iter().map(|g| g.len()).sum();
            let cands = keep
                .into_iter()
                .map(|g| {
                    let mean = linalg::column_mean(&linalg::select_columns(&z, &g));
                    Candidate {
                        mean: mean.iter().copied().collect(),
                        weight: g.len() as f64 / mass as f64,
                        members: g.iter().map(|&k| active[k]).collect(),
                    }
                })
                .collect();
            (None, Some(cands))
        };
        return Ok(EstimateReport {
            estimate,
            candidates,
            iterations: iteration + 1,
            final_objective: recon.objective,
            mode: cfg.mode,
            sigma_used: sigma,
            kappa_used: kappa,
            rank_w0: split.rank_w0,
            active,
            weights: state.c.clone(),
            stalled,
            invariant_trace: trace,
        });
    }
    Err(Error::PromiseViolated("outer loop did not terminate".into()))
}

#[allow(clippy::too_many_arguments)]
fn invariant_record(
    iteration: usize,
    before: &WeightState,
    after: &WeightState,
    tau: &[f64],
    mask: &[bool],
    alpha: f64,
    a: f64,
    objective: f64,
) -> InvariantRecord {
    let n = mask.len();
    let good_score: f64 = before
        .active()
        .iter()
        .filter(|&&i| mask[i])
        .map(|&i| before.c[i] * tau[i])
        .sum();
    let lost_good: f64 = (0..n).filter(|&i| mask[i]).map(|i| 1.0 - after.c[i]).sum();
    let lost_all: f64 = after.c.iter().map(|c| 1.0 - c).sum();
    let good_active = after.active().iter().filter(|&&i| mask[i]).count();
    let slack = 1e-9 * n as f64;
    InvariantRecord {
        iteration,
        objective,
        good_score,
        precondition: objective >= 4.0 * a && good_score <= alpha * a,
        invariant_i: lost_good <= alpha / 4.0 * lost_all + slack,
        invariant_ii: good_active as f64 >= min_active_size(alpha, n) - 1e-9,
    }
}

/// Lower-decile pairwise distance over sqrt(2d), the starting guess for sigma. Meant to
/// undershoot so that doubling approaches sigma from below.
pub fn initial_sigma_guess(data: &DMatrix<f64>, spec: &NormSpec) -> f64 {
    let n = data.ncols();
    let norm = spec.resolve(VertexMode::Native);
    let stride = (n / 200).max(1);
    let idx: Vec<usize> = (0..n).step_by(stride).collect();
    let mut dists = Vec::new();
    for (a, &i) in idx.iter().enumerate() {
        for &j in &idx[a + 1..] {
            dists.push(norm.eval((data.column(i) - data.column(j)).as_slice()));
        }
    }
    if dists.is_empty() {
        return 1.0;
    }
    dists.sort_by(f64::total_cmp);
    // a low quantile stays inside one cluster when the good points are a minority
    let low = dists[dists.len() / 10];
    let guess = low / (2.0 * data.nrows() as f64).sqrt();
    if guess > 0.0 {
        guess
    } else {
        f64::EPSILON
    }
}

/// Doubles sigma from `initial` (or the pairwise-distance guess) until the loop ends
/// without a promise violation.
pub fn recover_mean_auto(data: &DMatrix<f64>, alpha: f64, initial: Option<f64>, spec: &NormSpec, cfg: &EstimatorConfig) -> Result<EstimateReport> {
    let mut sigma = initial.unwrap_or_else(|| initial_sigma_guess(data, spec));
    for _ in 0..64 {
        match recover_mean(data, alpha, sigma, spec, cfg) {
            Err(Error::PromiseViolated(_)) | Err(Error::NoProgress) => sigma *= 2.0,
            other => return other,
        }
    }
    Err(Error::PromiseViolated("sigma doubling did not terminate".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn gaussian(d: usize, n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(d, n, |_, _| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn kappa_oracle_examples() {
        let g = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0]));
        let r = kappa_oracle(&g, &NormSpec::Euclidean, VertexMode::Native, 0).unwrap();
        assert_relative_eq!(r.value, 3.0, epsilon = 1e-12);
        assert_relative_eq!(r.y[(0, 0)], 1.0, epsilon = 1e-12);
        assert_relative_eq!(r.kappa, 1.0);

        // l1 in exact mode enumerates sign vectors of the l_inf dual ball
        let ones = DMatrix::from_element(2, 2, 1.0);
        let r = kappa_oracle(&ones, &NormSpec::L1ViaP { m: 3 }, VertexMode::ExactL1, 0).unwrap();
        assert_relative_eq!(r.value, 4.0, epsilon = 1e-12);

        let r = kappa_oracle(&DMatrix::zeros(3, 3), &NormSpec::PNorm { p: 1.5 }, VertexMode::Native, 0).unwrap();
        assert_eq!(r.value, 0.0);

        let bad = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]));
        assert!(matches!(kappa_oracle(&bad, &NormSpec::Euclidean, VertexMode::Native, 0), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn kappa_oracle_sandwich() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let b = DMatrix::from_fn(4, 6, |_, _| rng.random_range(-1.0..1.0));
            let g = &b * b.transpose();
            let r = kappa_oracle(&g, &NormSpec::PNorm { p: 1.5 }, VertexMode::Native, 3).unwrap();
            assert!(r.value >= r.lower - 1e-9);
            assert!(r.upper <= r.kappa * r.lower * 1.05);
        }
    }

    #[test]
    fn water_fill_examples() {
        let (w, v) = water_fill(&[2.0, 1.0], 1.0).unwrap();
        assert_relative_eq!(w[0], 0.8, epsilon = 1e-9);
        assert_relative_eq!(w[1], 0.6, epsilon = 1e-9);
        assert_relative_eq!(v, 0.4, epsilon = 1e-9);
        let (w, v) = water_fill(&[3.0, 0.5, 2.0], 3.0).unwrap();
        assert_eq!(w, vec![1.0; 3]);
        assert_eq!(v, 0.0);
        let (w, v) = water_fill(&[3.0, 0.5, 2.0], 0.0).unwrap();
        assert_eq!(w, vec![0.0; 3]);
        assert_eq!(v, 3.0);
    }

    /// Grid search over w in [0, 1]^2 with the budget constraint.
    fn grid_water_fill(l: [f64; 2], budget: f64) -> f64 {
        let steps = 2000;
        let mut best = f64::INFINITY;
        for a in 0..=steps {
            let w0 = a as f64 / steps as f64;
            let rest = budget - w0 * w0;
            if rest < 0.0 {
                break;
            }
            let w1 = rest.sqrt().min(1.0);
            best = best.min((l[0] * (1.0 - w0)).max(l[1] * (1.0 - w1)));
        }
        best
    }

    #[test]
    fn water_fill_matches_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let l = [rng.random_range(0.1..3.0), rng.random_range(0.1..3.0)];
            let budget = rng.random_range(0.0..2.0);
            let (_, v) = water_fill(&l, budget).unwrap();
            assert!((v - grid_water_fill(l, budget)).abs() < 2e-3, "{l:?} {budget}");
        }
    }

    #[test]
    fn fast_l2_examples() {
        let same = DMatrix::from_fn(3, 5, |r, _| r as f64);
        assert!(fast_l2_reconstruct(&same, 1.5).unwrap().value.abs() < 1e-12);

        let x = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 0.0, 0.0]);
        let r = fast_l2_reconstruct(&x, 2.0).unwrap();
        assert!(r.value.abs() < 1e-12);
        assert!((&x - &x * &r.w).norm() < 1e-12);

        let x = gaussian(3, 7, 1);
        let r = fast_l2_reconstruct(&x, 1.0).unwrap();
        let p = DMatrix::from_element(7, 7, 1.0 / 7.0);
        let centered = &x * (DMatrix::identity(7, 7) - p);
        assert_relative_eq!(r.value, linalg::spectral_norm(&centered), epsilon = 1e-10);
        let sums = DMatrix::from_element(1, 7, 1.0) * &r.w;
        assert!(sums.iter().all(|s| (s - 1.0).abs() < 1e-12));
    }

    #[test]
    fn split_examples() {
        let n = 4;
        let avg = DMatrix::from_element(n, n, 1.0 / n as f64);
        let (w0, w1, rank) = low_rank_split(&avg, 0.9).unwrap();
        assert_eq!(rank, 1);
        assert_relative_eq!(w0, avg, epsilon = 1e-12);
        assert!(w1.norm() < 1e-12);

        let (w0, w1, rank) = low_rank_split(&DMatrix::identity(3, 3), 0.9).unwrap();
        assert_eq!(rank, 3);
        assert_relative_eq!(w0, DMatrix::identity(3, 3), epsilon = 1e-12);
        assert!(w1.norm() < 1e-12);

        let u = DMatrix::from_row_slice(2, 2, &[0.6, -0.8, 0.8, 0.6]);
        let v = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let w = &u * DMatrix::from_diagonal(&DVector::from_vec(vec![0.95, 0.5])) * v.transpose();
        let (w0, w1, rank) = low_rank_split(&w, 0.9).unwrap();
        assert_eq!(rank, 1);
        // the defining identity W0 (I - W1) = W - W1
        let lhs = &w0 * (DMatrix::identity(2, 2) - &w1);
        assert_relative_eq!(lhs, &w - &w1, epsilon = 1e-12);

        assert!(matches!(low_rank_split(&avg, 1.0), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn downweight_examples() {
        let s = WeightState::new(3);
        let next = downweight(&s, &[0.0, 1.5, 3.0]).unwrap();
        assert_eq!(next.c, vec![1.0, 0.5, 0.0]);
        assert_eq!(next.active(), vec![0, 1]);
        let next = downweight(&s, &[2.0, 2.0, 2.0]).unwrap();
        assert_eq!(next.c, vec![0.0; 3]);
        assert!(matches!(downweight(&s, &[0.0; 3]), Err(Error::NoProgress)));
        // total decrease equals sum c_i tau_i / tau_max
        let c0 = WeightState { c: vec![1.0, 0.8, 0.6, 0.2], tau: vec![0.0; 4] };
        let tau = [0.3, 0.7, 0.1, 5.0];
        let next = downweight(&c0, &tau).unwrap();
        let drop: f64 = c0.c.iter().sum::<f64>() - next.c.iter().sum::<f64>();
        let expect = (1.0 * 0.3 + 0.8 * 0.7 + 0.6 * 0.1) / 0.7;
        assert_relative_eq!(drop, expect, epsilon = 1e-12);
        assert_eq!(next.c[3], 0.2);
    }

    #[test]
    fn saddle_matches_fast_l2_when_cap_forces_the_mean() {
        let x = gaussian(3, 12, 2);
        let c = vec![1.0; 12];
        let cfg = SaddleConfig { max_iter: 300, ..Default::default() };
        let s = saddle_reconstruct(&x, &c, 1.0 / 12.0, &NormSpec::Euclidean, &cfg).unwrap();
        let f = fast_l2_reconstruct(&x, 1.0).unwrap();
        assert!((s.value - f.value.powi(2)).abs() <= 0.05 * f.value.powi(2));
        assert!(s.upper >= s.value);
    }

    #[test]
    fn saddle_with_slack_cap_is_close_to_relaxed() {
        let x = gaussian(2, 10, 3);
        let c = vec![1.0; 10];
        let cfg = SaddleConfig { max_iter: 400, inner_iter: 60, ..Default::default() };
        let cap = 0.15;
        let s = saddle_reconstruct(&x, &c, cap, &NormSpec::Euclidean, &cfg).unwrap();
        let relaxed = relaxed_saddle_reconstruct(&x, &c, cap * 10.0, &NormSpec::Euclidean, &cfg).unwrap();
        // the capped simplex sits inside the Frobenius ball, so its value can only be larger
        assert!(relaxed.value <= s.upper * (1.0 + 1e-6));
        let sums = DMatrix::from_element(1, 10, 1.0) * s.w.to_dense();
        assert!(sums.iter().all(|v| (v - 1.0).abs() < 1e-9));
        let w = s.w.to_dense();
        assert!(w.iter().all(|&v| (-1e-12..=cap + 1e-12).contains(&v)));
    }

    #[test]
    fn saddle_of_identical_columns_is_zero() {
        let x = DMatrix::from_fn(3, 6, |r, _| r as f64 - 1.0);
        let c = vec![1.0; 6];
        let s = saddle_reconstruct(&x, &c, 0.5, &NormSpec::PNorm { p: 1.5 }, &SaddleConfig::default()).unwrap();
        assert!(s.value.abs() < 1e-12);
    }

    #[test]
    fn relaxed_matches_fast_l2_in_l2() {
        let x = gaussian(4, 30, 4);
        let c = vec![1.0; 30];
        let r = 2.0;
        let cfg = SaddleConfig { max_iter: 2000, ..Default::default() };
        let s = relaxed_saddle_reconstruct(&x, &c, r, &NormSpec::Euclidean, &cfg).unwrap();
        let f = fast_l2_reconstruct(&x, r).unwrap();
        let target = f.value.powi(2);
        assert!(s.value <= target * (1.0 + 1e-6));
        assert!(s.upper >= target * (1.0 - 1e-6));
        assert!((s.value - target).abs() <= 0.05 * target, "{} {}", s.value, target);
    }

    #[test]
    fn recover_mean_clean_gaussian() {
        let x = gaussian(5, 200, 6);
        let cfg = EstimatorConfig::default();
        let r = recover_mean(&x, 1.0, 1.5, &NormSpec::Euclidean, &cfg).unwrap();
        let est = DVector::from_vec(r.estimate.unwrap());
        assert!((est - linalg::column_mean(&x)).norm() < 1e-6);
        assert_eq!(r.iterations, 1);
    }

    #[test]
    fn recover_mean_removes_far_outliers() {
        let (d, n) = (10, 300);
        let mut x = gaussian(d, n, 7);
        let bad = 30;
        for i in 0..bad {
            for r in 0..d {
                x[(r, i)] = 5.0 * (d as f64).sqrt() / (d as f64).sqrt() * 3.0;
            }
        }
        let mask: Vec<bool> = (0..n).map(|i| i >= bad).collect();
        let good = linalg::select_columns(&x, &(bad..n).collect::<Vec<_>>());
        let cov = {
            let c = linalg::center_columns(&good, &DVector::zeros(d));
            &c * c.transpose() / (n - bad) as f64
        };
        let sigma = linalg::top_eigenpair(&cov).0.sqrt();
        for mode in [EstimatorMode::FastL2, EstimatorMode::SaddleL2] {
            let cfg = EstimatorConfig { mode, good_mask: Some(mask.clone()), dense_limit: 50, ..Default::default() };
            let r = recover_mean(&x, 0.9, sigma, &NormSpec::Euclidean, &cfg).unwrap();
            let est = DVector::from_vec(r.estimate.unwrap());
            let naive = linalg::column_mean(&x).norm();
            assert!(est.norm() < 0.5 * naive, "{mode:?}: {} vs {naive}", est.norm());
            for rec in &r.invariant_trace {
                if rec.precondition {
                    assert!(rec.invariant_i && rec.invariant_ii);
                }
            }
        }
    }

    #[test]
    fn recover_mean_lists_both_mirrored_clusters() {
        let (d, half) = (3, 40);
        let mut x = gaussian(d, 2 * half, 8) * 0.3;
        for i in half..2 * half {
            x[(0, i)] += 20.0;
        }
        let r = recover_mean(&x, 0.5, 0.4, &NormSpec::Euclidean, &EstimatorConfig::default()).unwrap();
        let cands = r.candidates.unwrap();
        assert!(cands.len() >= 2);
        let near = |target: f64| cands.iter().any(|c| (c.mean[0] - target).abs() < 2.0 && c.mean[1].abs() < 2.0);
        assert!(near(0.0) && near(20.0));
    }

    #[test]
    fn promise_violation_is_reported() {
        let mut x = gaussian(2, 40, 9);
        for i in 0..20 {
            x[(0, i)] += 50.0;
        }
        let r = recover_mean(&x, 0.9, 0.01, &NormSpec::Euclidean, &EstimatorConfig::default());
        assert!(matches!(r, Err(Error::PromiseViolated(_))));
        let auto = recover_mean_auto(&x, 0.9, Some(0.01), &NormSpec::Euclidean, &EstimatorConfig::default()).unwrap();
        assert!(auto.sigma_used > 0.01);
    }

    #[test]
    fn general_norm_runs_on_lp() {
        let (d, n) = (4, 150);
        let mut x = gaussian(d, n, 10);
        for i in 0..15 {
            x[(1, i)] += 25.0;
        }
        let cfg = EstimatorConfig { mode: EstimatorMode::GeneralNorm, saddle: SaddleConfig { max_iter: 200, ..Default::default() }, ..Default::default() };
        let r = recover_mean(&x, 0.9, 1.3, &NormSpec::PNorm { p: 1.5 }, &cfg).unwrap();
        let est = DVector::from_vec(r.estimate.unwrap());
        assert!(est.norm() < 0.5 * linalg::column_mean(&x).norm());
        assert_relative_eq!(r.kappa_used, std::f64::consts::FRAC_PI_2);
    }
}
