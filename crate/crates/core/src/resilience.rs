//! Resilience of finite point sets: sigma*(eps), its dualities, the integrated
//! tail functional, rank-resilience, and the exponential-time recovery procedures.
//!
//! A set S is (sigma, eps)-resilient around mu when every subset T with
//! |T| >= (1 - eps)|S| has ||mean_T(x) - mu|| <= sigma. Since
//! ||m|| = max over the dual ball of <m, v>, the maximum over T can be exchanged
//! with the maximum over v; for a fixed v the worst T simply keeps the
//! largest projections. That exchange is what every routine here relies on.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::norms::{
    induced_two_to_psi, next_combination, support_vertices, CertMethod, CertifiedInterval, NormSpec,
    ResolvedNorm, SupportSet, VertexMode, DEFAULT_VERTEX_CAP,
};

/// Default cap on the number of points for exhaustive subset searches.
pub const DEFAULT_EXHAUSTIVE_CAP: usize = 20;
/// Default cap on the number of subsets enumerated by the rank-resilience check.
pub const DEFAULT_SUBSET_CAP: usize = 1_000_000;

/// A finite set of points (columns) with an optional reference center.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    pub points: DMatrix<f64>,
    pub center: Option<DVector<f64>>,
}

impl PointSet {
    pub fn new(points: DMatrix<f64>) -> Self {
        PointSet { points, center: None }
    }

    pub fn with_center(points: DMatrix<f64>, center: DVector<f64>) -> Self {
        PointSet { points, center: Some(center) }
    }

    /// Points on the real line.
    pub fn scalars(values: &[f64]) -> Self {
        PointSet::new(DMatrix::from_row_slice(1, values.len(), values))
    }

    pub fn n(&self) -> usize {
        self.points.ncols()
    }

    pub fn d(&self) -> usize {
        self.points.nrows()
    }

    /// The reference center: the supplied one, or the column mean.
    pub fn center(&self) -> DVector<f64> {
        self.center.clone().unwrap_or_else(|| linalg::column_mean(&self.points))
    }

    pub fn centered(&self) -> DMatrix<f64> {
        linalg::center_columns(&self.points, &self.center())
    }

    fn validate(&self) -> Result<()> {
        if self.n() == 0 || self.d() == 0 {
            return Err(Error::InvalidInput("point set must be nonempty".into()));
        }
        if self.points.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("non-finite coordinate".into()));
        }
        if let Some(c) = &self.center {
            if c.len() != self.d() {
                return Err(Error::InvalidInput("center dimension mismatch".into()));
            }
        }
        Ok(())
    }
}

/// ceil(frac * n), tolerant of floating-point noise when frac * n is integral.
pub fn subset_size(n: usize, frac: f64) -> usize {
    let raw = frac * n as f64;
    let rounded = raw.round();
    if (raw - rounded).abs() <= 1e-9 * (1.0 + raw.abs()) {
        rounded as usize
    } else {
        raw.ceil() as usize
    }
}

/// Options for direction search in `sigma_star` and friends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaOptions {
    pub mode: VertexMode,
    /// Number of sampled dual directions when the dual ball is not enumerated.
    pub budget: usize,
    pub seed: u64,
    pub vertex_cap: usize,
}

impl Default for SigmaOptions {
    fn default() -> Self {
        SigmaOptions { mode: VertexMode::Native, budget: 100_000, seed: 0, vertex_cap: DEFAULT_VERTEX_CAP }
    }
}

impl SigmaOptions {
    pub fn exact_l1() -> Self {
        SigmaOptions { mode: VertexMode::ExactL1, ..Default::default() }
    }

    pub fn with_budget(mut self, budget: usize) -> Self {
        self.budget = budget;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Mean of the `t` largest entries, and their indices (ascending).
fn top_t(values: &[f64], t: usize) -> (f64, Vec<usize>) {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx.truncate(t);
    let mean = idx.iter().map(|&i| values[i]).sum::<f64>() / t as f64;
    idx.sort_unstable();
    (mean, idx)
}

fn projections(xc: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    let v = DVector::from_column_slice(v);
    (xc.transpose() * v).iter().copied().collect()
}

/// Where the dual ball comes from for a given resolved norm and dimension.
enum DualBall {
    Vertices(Vec<Vec<f64>>),
    Search(ResolvedNorm),
}

fn dual_ball(spec: &NormSpec, d: usize, opts: &SigmaOptions) -> Result<DualBall> {
    let resolved = spec.resolve(opts.mode);
    if d == 1 {
        // every norm in the family is |x| on the line
        return Ok(DualBall::Vertices(vec![vec![1.0], vec![-1.0]]));
    }
    match support_vertices(spec, d, opts.mode, opts.vertex_cap) {
        Ok(SupportSet::Vertices(v)) => Ok(DualBall::Vertices(v)),
        Ok(SupportSet::NotPolyhedral) | Err(Error::TooManyVertices { .. }) => Ok(DualBall::Search(resolved)),
        Err(e) => Err(e),
    }
}

/// Quasi-uniform or random starting directions on the dual unit sphere.
fn sample_dual_directions(resolved: &ResolvedNorm, d: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let normalize = |v: Vec<f64>| -> Option<Vec<f64>> {
        let n = resolved.dual(&v);
        (n > 0.0).then(|| v.into_iter().map(|x| x / n).collect())
    };
    let mut out = Vec::with_capacity(count);
    match (resolved, d) {
        (ResolvedNorm::L2, 2) => {
            for j in 0..count {
                let a = std::f64::consts::TAU * j as f64 / count as f64;
                out.push(vec![a.cos(), a.sin()]);
            }
        }
        (ResolvedNorm::L2, 3) => {
            // Fibonacci lattice
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            for j in 0..count {
                let z = 1.0 - 2.0 * (j as f64 + 0.5) / count as f64;
                let r = (1.0 - z * z).sqrt();
                let a = golden * j as f64;
                out.push(vec![r * a.cos(), r * a.sin(), z]);
            }
        }
        (ResolvedNorm::L1 | ResolvedNorm::TopK { .. }, _) => {
            // random dual vertices: signs on a random support of the right size
            let k = match resolved {
                ResolvedNorm::TopK { k } => (*k).min(d),
                _ => d,
            };
            for _ in 0..count {
                let mut v = vec![0.0; d];
                let support = rand::seq::index::sample(rng, d, k);
                for i in support.iter() {
                    v[i] = if rng.random::<bool>() { 1.0 } else { -1.0 };
                }
                out.push(v);
            }
        }
        _ => {
            while out.len() < count {
                let v: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                if let Some(v) = normalize(v) {
                    out.push(v);
                }
            }
        }
    }
    out
}

/// Result of a resilience computation with the maximizing direction and subset.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaStar {
    pub interval: CertifiedInterval,
    pub direction: Vec<f64>,
    pub subset: Vec<usize>,
    pub directions_used: usize,
}

/// Alternating ascent: for a direction take the worst subset, then the dual
/// maximizer of that subset's mean. Never decreases the value.
fn ascend_subset(xc: &DMatrix<f64>, t: usize, resolved: &ResolvedNorm, mut v: Vec<f64>) -> (f64, Vec<f64>, Vec<usize>) {
    let (mut value, mut subset) = top_t(&projections(xc, &v), t);
    for _ in 0..200 {
        let cols = linalg::select_columns(xc, &subset);
        let mean = linalg::column_mean(&cols);
        let next = resolved.dual_argmax(mean.as_slice());
        let (next_value, next_subset) = top_t(&projections(xc, &next), t);
        if next_value <= value * (1.0 + 1e-13) + 1e-300 {
            break;
        }
        value = next_value;
        subset = next_subset;
        v = next;
    }
    (value, v, subset)
}

/// Upper bound on sigma* from ||mean_T|| <= ||X_c||_{2->psi} / sqrt(t) and the triangle inequality.
fn sigma_upper_bound(xc: &DMatrix<f64>, t: usize, spec: &NormSpec, opts: &SigmaOptions) -> f64 {
    let resolved = spec.resolve(opts.mode);
    let norms: Vec<f64> = xc.column_iter().map(|c| resolved.eval(c.as_slice())).collect();
    let (triangle, _) = top_t(&norms, t);
    let spectral = match resolved {
        ResolvedNorm::L2 | ResolvedNorm::Lp { .. } => {
            induced_two_to_psi(xc, spec, opts.mode, 2_000, opts.seed ^ 0x5eed)
                .map(|c| c.upper / (t as f64).sqrt())
                .unwrap_or(f64::INFINITY)
        }
        _ => f64::INFINITY,
    };
    triangle.min(spectral)
}

/// sigma*(eps) with the maximizing direction and subset.
pub fn sigma_star_detailed(s: &PointSet, eps: f64, spec: &NormSpec, opts: &SigmaOptions) -> Result<SigmaStar> {
    s.validate()?;
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::InvalidEps(format!("eps = {eps} outside [0, 1)")));
    }
    let t = subset_size(s.n(), 1.0 - eps);
    if t == 0 {
        return Err(Error::InvalidEps(format!("no subset of size (1 - {eps}) * {}", s.n())));
    }
    let xc = s.centered();
    sigma_star_centered(&xc, t, spec, opts)
}

fn sigma_star_centered(xc: &DMatrix<f64>, t: usize, spec: &NormSpec, opts: &SigmaOptions) -> Result<SigmaStar> {
    let d = xc.nrows();
    match dual_ball(spec, d, opts)? {
        DualBall::Vertices(vs) => {
            let mut best = (f64::NEG_INFINITY, Vec::new(), Vec::new());
            for v in &vs {
                let (val, subset) = top_t(&projections(xc, v), t);
                if val > best.0 {
                    best = (val, v.clone(), subset);
                }
            }
            let value = best.0.max(0.0);
            Ok(SigmaStar {
                interval: CertifiedInterval::exact(value, CertMethod::VertexEnum),
                direction: best.1,
                subset: best.2,
                directions_used: vs.len(),
            })
        }
        DualBall::Search(resolved) => {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            let budget = opts.budget.max(1);
            let mut scored: Vec<(f64, Vec<f64>)> = sample_dual_directions(&resolved, d, budget, &mut rng)
                .into_iter()
                .map(|v| (top_t(&projections(xc, &v), t).0, v))
                .collect();
            // data-driven starts: the direction realizing each point's norm
            let stride = (xc.ncols() / 64).max(1);
            for i in (0..xc.ncols()).step_by(stride) {
                let v = resolved.dual_argmax(xc.column(i).as_slice());
                if v.iter().any(|&x| x != 0.0) {
                    scored.push((top_t(&projections(xc, &v), t).0, v));
                }
            }
            let used = scored.len();
            scored.sort_by(|a, b| b.0.total_cmp(&a.0));
            scored.truncate(32);
            let mut best = (f64::NEG_INFINITY, Vec::new(), Vec::new());
            for (_, v) in scored {
                let (val, v, subset) = ascend_subset(xc, t, &resolved, v);
                if val > best.0 {
                    best = (val, v, subset);
                }
            }
            let lower = best.0.max(0.0);
            let upper = sigma_upper_bound(xc, t, spec, opts).max(lower);
            Ok(SigmaStar {
                interval: CertifiedInterval { lower, upper, method: CertMethod::SampledDirections },
                direction: best.1,
                subset: best.2,
                directions_used: used,
            })
        }
    }
}

/// Bounds on sigma*(eps): the largest ||mean_T(x) - mu|| over |T| = ceil((1 - eps) n).
pub fn sigma_star(s: &PointSet, eps: f64, spec: &NormSpec, opts: &SigmaOptions) -> Result<CertifiedInterval> {
    sigma_star_detailed(s, eps, spec, opts).map(|r| r.interval)
}

/// Mean of the ceil(eps n) largest projections <x_i - mu, v>.
pub fn tail_conditional_mean(s: &PointSet, v: &[f64], eps: f64, spec: &NormSpec, mode: VertexMode) -> Result<f64> {
    s.validate()?;
    if v.len() != s.d() {
        return Err(Error::InvalidInput("direction dimension mismatch".into()));
    }
    let dual = spec.resolve(mode).dual(v);
    if dual > 1.0 + 1e-9 {
        return Err(Error::InvalidInput(format!("direction has dual norm {dual} > 1")));
    }
    if !(eps > 0.0 && eps <= 1.0) || eps * (s.n() as f64) < 1.0 - 1e-9 {
        return Err(Error::InvalidEps(format!("eps * n = {} < 1", eps * s.n() as f64)));
    }
    let k = subset_size(s.n(), eps);
    Ok(top_t(&projections(&s.centered(), v), k).0)
}

/// Witness that a set is not resilient at the requested level.
#[derive(Debug, Clone, PartialEq)]
pub struct ResilienceWitness {
    pub direction: Vec<f64>,
    pub subset: Vec<usize>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResilienceCheck {
    /// True iff the certified upper bound on sigma*(eps) is at most sigma.
    pub resilient: bool,
    pub sigma_star: CertifiedInterval,
    /// Present whenever a subset provably violates the bound.
    pub witness: Option<ResilienceWitness>,
}

pub fn is_resilient(s: &PointSet, sigma: f64, eps: f64, spec: &NormSpec, opts: &SigmaOptions) -> Result<ResilienceCheck> {
    let r = sigma_star_detailed(s, eps, spec, opts)?;
    let tol = 1e-12 * (1.0 + sigma.abs());
    let resilient = r.interval.upper <= sigma + tol;
    let witness = (r.interval.lower > sigma + tol).then(|| ResilienceWitness {
        direction: r.direction.clone(),
        subset: r.subset.clone(),
        value: r.interval.lower,
    });
    Ok(ResilienceCheck { resilient, sigma_star: r.interval, witness })
}

/// Colexicographic successor of a sorted k-subset of 0..n.
pub fn next_colex(c: &mut [usize], n: usize) -> bool {
    let k = c.len();
    for j in 0..k {
        let limit = if j + 1 < k { c[j + 1] } else { n };
        if c[j] + 1 < limit {
            c[j] += 1;
            for (i, slot) in c.iter_mut().enumerate().take(j) {
                *slot = i;
            }
            return true;
        }
    }
    false
}

fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Exact sigma around `center` for subsets of size >= t of the given columns,
/// by enumerating every subset of size exactly t (smaller subsets are the worst case
/// only through their supersets' convex combinations, so size t suffices).
fn brute_force_sigma(x: &DMatrix<f64>, center: &DVector<f64>, t: usize, resolved: &ResolvedNorm) -> (f64, Vec<usize>) {
    let n = x.ncols();
    let xc = linalg::center_columns(x, center);
    let mut c: Vec<usize> = (0..t).collect();
    let mut best = (f64::NEG_INFINITY, Vec::new());
    loop {
        let mut sum = DVector::zeros(x.nrows());
        for &i in &c {
            sum += xc.column(i);
        }
        let val = resolved.eval((sum / t as f64).as_slice());
        if val > best.0 {
            best = (val, c.clone());
        }
        if !next_combination(&mut c, n) {
            break;
        }
    }
    best
}

/// Exhaustive resilience check of columns `idx` of `data` around their own mean.
fn subset_is_resilient(data: &DMatrix<f64>, idx: &[usize], sigma: f64, eps: f64, resolved: &ResolvedNorm) -> bool {
    let x = linalg::select_columns(data, idx);
    let center = linalg::column_mean(&x);
    let t = subset_size(idx.len(), 1.0 - eps).max(1);
    let (val, _) = brute_force_sigma(&x, &center, t, resolved);
    val <= sigma * (1.0 + 1e-12) + 1e-12
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExhaustiveEstimate {
    pub estimate: DVector<f64>,
    pub subset: Vec<usize>,
}

/// Exponential-time robust mean: the mean of the first subset of size (1 - eps) n,
/// in colexicographic order, that is (sigma, eps / (1 - eps))-resilient around its own mean.
pub fn recover_mean_exhaustive(
    data: &DMatrix<f64>,
    eps: f64,
    sigma: f64,
    spec: &NormSpec,
    mode: VertexMode,
    cap: usize,
) -> Result<ExhaustiveEstimate> {
    PointSet::new(data.clone()).validate()?;
    let n = data.ncols();
    if n > cap {
        return Err(Error::InvalidConfig(format!("n = {n} exceeds the exhaustive cap {cap}")));
    }
    if !(0.0..0.5).contains(&eps) {
        return Err(Error::InvalidEps(format!("eps = {eps} outside [0, 1/2)")));
    }
    let m = subset_size(n, 1.0 - eps);
    let inner_eps = eps / (1.0 - eps);
    let t = subset_size(m, 1.0 - inner_eps).max(1);
    let work = binomial(n, m) * binomial(m, t);
    if work > 1e9 {
        return Err(Error::TooManySubsets { count: work, cap: 1_000_000_000 });
    }
    let resolved = spec.resolve(mode);
    let mut c: Vec<usize> = (0..m).collect();
    loop {
        if subset_is_resilient(data, &c, sigma, inner_eps, &resolved) {
            let x = linalg::select_columns(data, &c);
            return Ok(ExhaustiveEstimate { estimate: linalg::column_mean(&x), subset: c });
        }
        if !next_colex(&mut c, n) {
            return Err(Error::NoResilientSubset);
        }
    }
}

/// One candidate of a list-decoding output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub mean: Vec<f64>,
    /// Probability of being sampled.
    pub weight: f64,
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverResult {
    pub candidates: Vec<Candidate>,
    /// True when the greedy local search was used instead of exhaustive search.
    pub heuristic: bool,
    /// True when no candidate was found.
    pub empty: bool,
}

/// List recovery when only an alpha fraction is good: a maximal collection of
/// disjoint subsets of size >= alpha n / 2, each (8 sigma / alpha, 1 - alpha / 2)-resilient
/// around its own mean. Sampling one of the candidate means uniformly lands within
/// (16 / alpha) sigma of the good mean with probability >= alpha / 2 when the good set is
/// (sigma, alpha / 4)-resilient.
pub fn recover_mean_cover(
    data: &DMatrix<f64>,
    alpha: f64,
    sigma: f64,
    spec: &NormSpec,
    mode: VertexMode,
    cap: usize,
    seed: u64,
) -> Result<CoverResult> {
    PointSet::new(data.clone()).validate()?;
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidConfig(format!("alpha = {alpha} outside (0, 1]")));
    }
    let n = data.ncols();
    let min_size = subset_size(n, alpha / 2.0).max(1);
    let set_sigma = 8.0 * sigma / alpha;
    let set_eps = 1.0 - alpha / 2.0;
    let resolved = spec.resolve(mode);
    let heuristic = n > cap;
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while remaining.len() >= min_size {
        let found = if heuristic {
            greedy_resilient_subset(data, &remaining, min_size, set_sigma, set_eps, spec, mode, &mut rng)
        } else {
            exhaustive_resilient_subset(data, &remaining, min_size, set_sigma, set_eps, &resolved)
        };
        match found {
            Some(group) => {
                remaining.retain(|i| !group.contains(i));
                groups.push(group);
            }
            None => break,
        }
    }
    let m = groups.len();
    let candidates = groups
        .into_iter()
        .map(|g| {
            let mean = linalg::column_mean(&linalg::select_columns(data, &g));
            Candidate { mean: mean.iter().copied().collect(), weight: 1.0 / m as f64, members: g }
        })
        .collect::<Vec<_>>();
    Ok(CoverResult { empty: candidates.is_empty(), candidates, heuristic })
}

/// Largest resilient subset of `pool` (sizes descending, colex within a size).
fn exhaustive_resilient_subset(
    data: &DMatrix<f64>,
    pool: &[usize],
    min_size: usize,
    sigma: f64,
    eps: f64,
    resolved: &ResolvedNorm,
) -> Option<Vec<usize>> {
    for size in (min_size..=pool.len()).rev() {
        let mut c: Vec<usize> = (0..size).collect();
        loop {
            let idx: Vec<usize> = c.iter().map(|&j| pool[j]).collect();
            if subset_is_resilient(data, &idx, sigma, eps, resolved) {
                return Some(idx);
            }
            if !next_colex(&mut c, pool.len()) {
                break;
            }
        }
    }
    None
}

/// Local search for a resilient subset of size `size`: grow around a seed point by
/// nearest neighbours, then swap the member farthest from the running mean for the
/// closest outsider while that lowers the measured sigma.
#[allow(clippy::too_many_arguments)]
fn greedy_resilient_subset(
    data: &DMatrix<f64>,
    pool: &[usize],
    size: usize,
    sigma: f64,
    eps: f64,
    spec: &NormSpec,
    mode: VertexMode,
    rng: &mut ChaCha8Rng,
) -> Option<Vec<usize>> {
    let resolved = spec.resolve(mode);
    let opts = SigmaOptions { mode, budget: 256, seed: rng.random(), vertex_cap: DEFAULT_VERTEX_CAP };
    let dist = |a: usize, b: usize| -> f64 {
        let diff = data.column(a) - data.column(b);
        resolved.eval(diff.as_slice())
    };
    let measure = |idx: &[usize]| -> Option<CertifiedInterval> {
        let ps = PointSet::new(linalg::select_columns(data, idx));
        sigma_star(&ps, eps, spec, &opts).ok()
    };
    let mut seeds: Vec<usize> = pool.to_vec();
    for i in (1..seeds.len()).rev() {
        let j = rng.random_range(0..=i);
        seeds.swap(i, j);
    }
    for &seed_point in seeds.iter().take(8) {
        let mut order: Vec<usize> = pool.to_vec();
        order.sort_by(|&a, &b| dist(seed_point, a).total_cmp(&dist(seed_point, b)));
        let mut members: Vec<usize> = order[..size].to_vec();
        let mut outside: Vec<usize> = order[size..].to_vec();
        let mut current = measure(&members)?;
        for _ in 0..200 {
            if current.upper <= sigma {
                members.sort_unstable();
                return Some(members);
            }
            let mean = linalg::column_mean(&linalg::select_columns(data, &members));
            let far = (0..members.len())
                .max_by(|&a, &b| {
                    let da = resolved.eval((data.column(members[a]) - &mean).as_slice());
                    let db = resolved.eval((data.column(members[b]) - &mean).as_slice());
                    da.total_cmp(&db)
                })
                .expect("nonempty");
            let Some(near) = (0..outside.len()).min_by(|&a, &b| {
                let da = resolved.eval((data.column(outside[a]) - &mean).as_slice());
                let db = resolved.eval((data.column(outside[b]) - &mean).as_slice());
                da.total_cmp(&db)
            }) else {
                break;
            };
            let mut trial = members.clone();
            trial[far] = outside[near];
            let measured = measure(&trial)?;
            if measured.upper >= current.upper {
                break;
            }
            outside[near] = members[far];
            members = trial;
            current = measured;
        }
        if current.upper <= sigma {
            members.sort_unstable();
            return Some(members);
        }
    }
    None
}

/// Whether every large column subset keeps the column space with a bounded pseudoinverse cross-norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankResilienceReport {
    pub delta: f64,
    pub holds: bool,
    pub colspace_preserved: bool,
    pub worst_subset: Vec<usize>,
    pub worst_pinv_norm: f64,
    pub subsets_checked: usize,
}

/// ||X_T^+ X_S||_2 and whether rank(X_T) = rank(X_S).
pub fn pinv_cross_norm(xs: &DMatrix<f64>, subset: &[usize]) -> (f64, bool) {
    let xt = linalg::select_columns(xs, subset);
    let full_rank = linalg::numerical_rank(xs);
    let rank_t = linalg::numerical_rank(&xt);
    let cross = linalg::pinv(&xt) * xs;
    (linalg::spectral_norm(&cross), rank_t == full_rank)
}

/// Enumerates every T subset of the columns with |T| >= (1 - delta)|S| and reports the worst one.
pub fn rank_resilience_check(xs: &DMatrix<f64>, delta: f64, cap: usize) -> Result<RankResilienceReport> {
    let n = xs.ncols();
    if n == 0 {
        return Err(Error::InvalidInput("empty column set".into()));
    }
    if !(0.0..1.0).contains(&delta) {
        return Err(Error::InvalidConfig(format!("delta = {delta} outside [0, 1)")));
    }
    let min_keep = subset_size(n, 1.0 - delta).max(1);
    let max_drop = n - min_keep;
    let count: f64 = (0..=max_drop).map(|r| binomial(n, r)).sum();
    if count > cap as f64 {
        return Err(Error::TooManySubsets { count, cap });
    }
    let mut worst: Option<(bool, f64, Vec<usize>)> = None;
    let mut checked = 0usize;
    for keep in min_keep..=n {
        let mut c: Vec<usize> = (0..keep).collect();
        loop {
            let (norm, same_space) = pinv_cross_norm(xs, &c);
            checked += 1;
            // a lost column space dominates any norm value
            let replace = match &worst {
                None => true,
                Some((ws, wn, _)) => (!same_space && *ws) || (same_space == *ws && norm > *wn),
            };
            if replace {
                worst = Some((same_space, norm, c.clone()));
            }
            if !next_combination(&mut c, n) {
                break;
            }
        }
    }
    let (colspace_preserved, worst_pinv_norm, worst_subset) = worst.expect("at least T = S");
    Ok(RankResilienceReport {
        delta,
        holds: colspace_preserved && worst_pinv_norm <= 2.0 + 1e-12,
        colspace_preserved,
        worst_subset,
        worst_pinv_norm,
        subsets_checked: checked,
    })
}

/// Indices of the ceil(quantile n) points closest to `center`, ascending.
pub fn prune_by_norm(data: &DMatrix<f64>, center: &DVector<f64>, quantile: f64, spec: &NormSpec) -> Result<Vec<usize>> {
    if !(quantile > 0.0 && quantile <= 1.0) {
        return Err(Error::InvalidConfig(format!("quantile = {quantile} outside (0, 1]")));
    }
    let resolved = spec.resolve(VertexMode::Native);
    let dists: Vec<f64> = data.column_iter().map(|c| resolved.eval((c - center).as_slice())).collect();
    let keep = subset_size(data.ncols(), quantile);
    let mut idx: Vec<usize> = (0..data.ncols()).collect();
    idx.sort_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(a.cmp(&b)));
    idx.truncate(keep);
    idx.sort_unstable();
    Ok(idx)
}

/// First absolute moment max_{||v||_* <= 1} (1/n) sum_i |<x_i - mu, v>|.
pub fn first_moment(s: &PointSet, spec: &NormSpec, opts: &SigmaOptions) -> Result<CertifiedInterval> {
    s.validate()?;
    let xc = s.centered();
    let n = xc.ncols() as f64;
    let value = |v: &[f64]| projections(&xc, v).iter().map(|x| x.abs()).sum::<f64>() / n;
    match dual_ball(spec, xc.nrows(), opts)? {
        DualBall::Vertices(vs) => {
            let best = vs.iter().map(|v| value(v)).fold(0.0, f64::max);
            Ok(CertifiedInterval::exact(best, CertMethod::VertexEnum))
        }
        DualBall::Search(resolved) => {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            let mut scored: Vec<(f64, Vec<f64>)> = sample_dual_directions(&resolved, xc.nrows(), opts.budget.max(1), &mut rng)
                .into_iter()
                .map(|v| (value(&v), v))
                .collect();
            scored.sort_by(|a, b| b.0.total_cmp(&a.0));
            scored.truncate(32);
            let mut best: f64 = 0.0;
            for (mut val, mut v) in scored {
                // linearize |<x, v>| at the current signs; convexity makes this monotone
                for _ in 0..200 {
                    let proj = projections(&xc, &v);
                    let signs = DVector::from_iterator(proj.len(), proj.iter().map(|&p| if p >= 0.0 { 1.0 } else { -1.0 }));
                    let g = &xc * signs;
                    let next = resolved.dual_argmax(g.as_slice());
                    let next_val = value(&next);
                    if next_val <= val * (1.0 + 1e-13) {
                        break;
                    }
                    val = next_val;
                    v = next;
                }
                best = best.max(val);
            }
            // |<x, v>| <= ||x|| for ||v||_* <= 1, and Cauchy-Schwarz against the second moment
            let resolved_norms: f64 = xc.column_iter().map(|c| resolved.eval(c.as_slice())).sum::<f64>() / n;
            let second = match resolved {
                ResolvedNorm::L2 | ResolvedNorm::Lp { .. } => induced_two_to_psi(&xc, spec, opts.mode, 2_000, opts.seed ^ 0xf157)
                    .map(|c| c.upper / n.sqrt())
                    .unwrap_or(f64::INFINITY),
                _ => f64::INFINITY,
            };
            Ok(CertifiedInterval {
                lower: best,
                upper: resolved_norms.min(second).max(best),
                method: CertMethod::SampledDirections,
            })
        }
    }
}

/// Grid of (eps, sigma*(eps)) values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResilienceProfile {
    pub eps_grid: Vec<f64>,
    pub sigma_values: Vec<f64>,
    pub method: ProfileMethod,
    pub directions_used: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProfileMethod {
    ExactVertices,
    SampledDirections,
}

impl ProfileMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            ProfileMethod::ExactVertices => "exact_vertices",
            ProfileMethod::SampledDirections => "sampled_directions",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "exact_vertices" => Ok(ProfileMethod::ExactVertices),
            "sampled_directions" => Ok(ProfileMethod::SampledDirections),
            other => Err(Error::Format(format!("unknown profile method {other:?}"))),
        }
    }
}

impl ResilienceProfile {
    /// Builds a profile from explicit values, checking the grid and monotonicity.
    pub fn from_values(eps_grid: Vec<f64>, sigma_values: Vec<f64>, method: ProfileMethod, directions_used: usize) -> Result<Self> {
        if eps_grid.len() != sigma_values.len() || eps_grid.is_empty() {
            return Err(Error::InvalidInput("grid and values must be nonempty and of equal length".into()));
        }
        if eps_grid.windows(2).any(|w| w[0] >= w[1]) || eps_grid.iter().any(|&e| !(e > 0.0 && e < 1.0)) {
            return Err(Error::InvalidInput("eps grid must be increasing inside (0, 1)".into()));
        }
        if sigma_values.iter().any(|&s| !(s >= 0.0)) {
            return Err(Error::InvalidInput("sigma values must be nonnegative".into()));
        }
        Ok(ResilienceProfile { eps_grid, sigma_values, method, directions_used })
    }

    /// Linear interpolation of sigma at `eps` inside the grid.
    pub fn interpolate(&self, eps: f64) -> Option<f64> {
        let g = &self.eps_grid;
        let tol = 1e-12;
        if eps < g[0] - tol || eps > g[g.len() - 1] + tol {
            return None;
        }
        let j = g.partition_point(|&x| x < eps);
        if j == 0 {
            return Some(self.sigma_values[0]);
        }
        if j == g.len() {
            return Some(self.sigma_values[g.len() - 1]);
        }
        let (e0, e1) = (g[j - 1], g[j]);
        let (s0, s1) = (self.sigma_values[j - 1], self.sigma_values[j]);
        Some(s0 + (s1 - s0) * (eps - e0) / (e1 - e0))
    }
}

/// sigma*(eps) on a grid. Sampled values are lower bounds, so the running maximum
/// along the grid is still a lower bound and restores monotonicity.
pub fn resilience_profile(s: &PointSet, eps_grid: &[f64], spec: &NormSpec, opts: &SigmaOptions) -> Result<ResilienceProfile> {
    let mut values = Vec::with_capacity(eps_grid.len());
    let mut exact = true;
    let mut used = 0;
    let mut running: f64 = 0.0;
    for &eps in eps_grid {
        let r = sigma_star_detailed(s, eps, spec, opts)?;
        exact &= r.interval.method == CertMethod::VertexEnum;
        used = used.max(r.directions_used);
        running = running.max(r.interval.lower);
        values.push(running);
    }
    let method = if exact { ProfileMethod::ExactVertices } else { ProfileMethod::SampledDirections };
    ResilienceProfile::from_values(eps_grid.to_vec(), values, method, used)
}

/// sqrt of the trapezoid rule for the integral of u^{-2} sigma*(u)^2 over [eps/2, 1/2].
pub fn sigma_tilde(profile: &ResilienceProfile, eps: f64) -> Result<f64> {
    let lo = eps / 2.0;
    let hi = 0.5;
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::InvalidEps(format!("eps = {eps} outside (0, 1]")));
    }
    let (Some(s_lo), Some(s_hi)) = (profile.interpolate(lo), profile.interpolate(hi)) else {
        return Err(Error::GridCoverage { lo, hi });
    };
    let mut nodes = vec![(lo, s_lo)];
    for (&e, &s) in profile.eps_grid.iter().zip(&profile.sigma_values) {
        if e > lo && e < hi {
            nodes.push((e, s));
        }
    }
    nodes.push((hi, s_hi));
    let f = |(u, s): (f64, f64)| (s / u).powi(2);
    let integral: f64 = nodes.windows(2).map(|w| 0.5 * (w[1].0 - w[0].0) * (f(w[0]) + f(w[1]))).sum();
    Ok(integral.max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn four_points() -> PointSet {
        PointSet::with_center(DMatrix::from_row_slice(1, 4, &[0.0, 0.0, 0.0, 3.0]), DVector::from_element(1, 0.75))
    }

    /// Independent oracle: enumerate every subset of the given size.
    fn brute(s: &PointSet, size: usize, resolved: ResolvedNorm) -> f64 {
        let n = s.n();
        let mu = s.center();
        let mut best: f64 = 0.0;
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize != size {
                continue;
            }
            let mut sum = DVector::zeros(s.d());
            for i in 0..n {
                if mask >> i & 1 == 1 {
                    sum += s.points.column(i) - &mu;
                }
            }
            best = best.max(resolved.eval((sum / size as f64).as_slice()));
        }
        best
    }

    #[test]
    fn sigma_star_examples() {
        let s = four_points();
        let spec = NormSpec::Euclidean;
        let opts = SigmaOptions::default();
        assert_relative_eq!(brute(&s, 3, ResolvedNorm::L2), 0.75, epsilon = 1e-15);
        let r = sigma_star(&s, 0.25, &spec, &opts).unwrap();
        assert!(r.is_exact());
        assert_relative_eq!(r.upper, 0.75, epsilon = 1e-12);
        assert_relative_eq!(brute(&s, 1, ResolvedNorm::L2), 2.25, epsilon = 1e-15);
        let r = sigma_star(&s, 0.75, &spec, &opts).unwrap();
        assert_relative_eq!(r.upper, 2.25, epsilon = 1e-12);
        assert_relative_eq!(r.upper, (1.0 - 0.25) / 0.25 * 0.75, epsilon = 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts = DMatrix::from_fn(3, 7, |_, _| rng.random_range(-1.0..1.0));
        let r = sigma_star(&PointSet::new(pts), 0.0, &spec, &opts.with_budget(500)).unwrap();
        assert!(r.lower.abs() < 1e-12);
    }

    #[test]
    fn invalid_eps_is_rejected() {
        let s = four_points();
        assert!(matches!(sigma_star(&s, 1.0, &NormSpec::Euclidean, &SigmaOptions::default()), Err(Error::InvalidEps(_))));
        assert!(matches!(
            tail_conditional_mean(&s, &[1.0], 0.1, &NormSpec::Euclidean, VertexMode::Native),
            Err(Error::InvalidEps(_))
        ));
    }

    #[test]
    fn sampled_euclidean_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for d in 2..=3 {
            let pts = DMatrix::from_fn(d, 8, |_, _| rng.random_range(-2.0..2.0));
            let s = PointSet::new(pts);
            let r = sigma_star(&s, 0.25, &NormSpec::Euclidean, &SigmaOptions::default()).unwrap();
            let exact = brute(&s, 6, ResolvedNorm::L2);
            assert!(r.lower <= exact + 1e-12);
            assert!(r.upper >= exact - 1e-12);
            assert_relative_eq!(r.lower, exact, epsilon = 1e-9);
        }
    }

    #[test]
    fn tail_mean_examples() {
        let s = PointSet::scalars(&[-1.0, 1.0]);
        let v = tail_conditional_mean(&s, &[1.0], 0.5, &NormSpec::Euclidean, VertexMode::Native).unwrap();
        assert_relative_eq!(v, 1.0);
        let v = tail_conditional_mean(&four_points(), &[1.0], 0.25, &NormSpec::Euclidean, VertexMode::Native).unwrap();
        assert_relative_eq!(v, 2.25);
        let sym = PointSet::new(DMatrix::from_row_slice(2, 4, &[1.0, -1.0, 0.0, 0.0, 0.0, 0.0, 2.0, -2.0]));
        let v = [0.6, 0.8];
        let neg = [-0.6, -0.8];
        let a = tail_conditional_mean(&sym, &v, 0.5, &NormSpec::Euclidean, VertexMode::Native).unwrap();
        let b = tail_conditional_mean(&sym, &neg, 0.5, &NormSpec::Euclidean, VertexMode::Native).unwrap();
        assert_relative_eq!(a, b, epsilon = 1e-12);
        assert!(tail_conditional_mean(&sym, &[2.0, 0.0], 0.5, &NormSpec::Euclidean, VertexMode::Native).is_err());
    }

    #[test]
    fn is_resilient_examples() {
        let basis = PointSet::with_center(DMatrix::identity(4, 4), DVector::zeros(4));
        let r = is_resilient(&basis, 1.0, 0.5, &NormSpec::PNorm { p: 2.0 }, &SigmaOptions::default()).unwrap();
        assert!(r.resilient);
        assert_relative_eq!(r.sigma_star.upper, 0.5f64.sqrt(), epsilon = 1e-9);

        let r = is_resilient(&four_points(), 0.5, 0.25, &NormSpec::Euclidean, &SigmaOptions::default()).unwrap();
        assert!(!r.resilient);
        let w = r.witness.unwrap();
        // the three zeros: their mean is 0.75 away from the center
        assert_eq!(w.subset, vec![0, 1, 2]);
        assert_relative_eq!(w.value, 0.75, epsilon = 1e-12);

        let single = PointSet::new(DMatrix::from_row_slice(2, 1, &[3.0, -1.0]));
        assert!(is_resilient(&single, 0.0, 0.0, &NormSpec::Euclidean, &SigmaOptions::default()).unwrap().resilient);
    }

    #[test]
    fn exhaustive_recovery_examples() {
        let data = DMatrix::from_row_slice(1, 4, &[0.0, 0.0, 0.0, 3.0]);
        let r = recover_mean_exhaustive(&data, 0.25, 0.0, &NormSpec::Euclidean, VertexMode::Native, 20).unwrap();
        assert_relative_eq!(r.estimate[0], 0.0);
        assert_eq!(r.subset, vec![0, 1, 2]);

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let clean = DMatrix::from_fn(2, 6, |_, _| rng.sample::<f64, _>(StandardNormal));
        let r = recover_mean_exhaustive(&clean, 0.0, 0.0, &NormSpec::Euclidean, VertexMode::Native, 20).unwrap();
        assert_relative_eq!(r.estimate, linalg::column_mean(&clean), epsilon = 1e-12);

        assert!(matches!(
            recover_mean_exhaustive(&data, 0.25, -1.0, &NormSpec::Euclidean, VertexMode::Native, 20),
            Err(Error::NoResilientSubset)
        ));
        assert!(recover_mean_exhaustive(&DMatrix::zeros(1, 21), 0.1, 1.0, &NormSpec::Euclidean, VertexMode::Native, 20).is_err());
    }

    #[test]
    fn colex_order_visits_every_subset_once() {
        let mut c = vec![0, 1];
        let mut seen = vec![c.clone()];
        while next_colex(&mut c, 4) {
            seen.push(c.clone());
        }
        assert_eq!(seen, vec![vec![0, 1], vec![0, 2], vec![1, 2], vec![0, 3], vec![1, 3], vec![2, 3]]);
    }

    #[test]
    fn cover_examples() {
        // two identical clusters, one shifted far away
        let base = [0.0, 0.1, -0.1, 0.05, -0.05];
        let mut vals = base.to_vec();
        vals.extend(base.iter().map(|x| x + 50.0));
        let data = DMatrix::from_row_slice(1, 10, &vals);
        let r = recover_mean_cover(&data, 0.5, 0.1, &NormSpec::Euclidean, VertexMode::Native, 20, 0).unwrap();
        assert!(!r.heuristic);
        assert_eq!(r.candidates.len(), 2);
        let mut means: Vec<f64> = r.candidates.iter().map(|c| c.mean[0]).collect();
        means.sort_by(f64::total_cmp);
        assert_relative_eq!(means[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(means[1], 50.0, epsilon = 1e-12);
        assert!(r.candidates.len() <= (2.0f64 / 0.5).ceil() as usize);

        let data = DMatrix::from_row_slice(1, 5, &base);
        let r = recover_mean_cover(&data, 1.0, 0.1, &NormSpec::Euclidean, VertexMode::Native, 20, 0).unwrap();
        assert_eq!(r.candidates.len(), 1);
        assert_relative_eq!(r.candidates[0].mean[0], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn rank_resilience_examples() {
        let x = DMatrix::from_row_slice(2, 4, &[1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0]);
        let r = rank_resilience_check(&x, 0.25, DEFAULT_SUBSET_CAP).unwrap();
        assert!(r.holds);
        assert_relative_eq!(r.worst_pinv_norm, 2f64.sqrt(), epsilon = 1e-12);

        let r = rank_resilience_check(&DMatrix::identity(3, 3), 1.0 / 3.0, DEFAULT_SUBSET_CAP).unwrap();
        assert!(!r.holds);
        assert!(!r.colspace_preserved);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let full = DMatrix::from_fn(5, 3, |_, _| rng.random_range(-1.0..1.0));
        let r = rank_resilience_check(&full, 0.0, DEFAULT_SUBSET_CAP).unwrap();
        assert!(r.holds);
        assert_relative_eq!(r.worst_pinv_norm, 1.0, epsilon = 1e-12);
        assert_eq!(r.subsets_checked, 1);

        assert!(matches!(
            rank_resilience_check(&DMatrix::zeros(2, 40), 0.5, DEFAULT_SUBSET_CAP),
            Err(Error::TooManySubsets { .. })
        ));
    }

    #[test]
    fn prune_examples() {
        let data = DMatrix::from_row_slice(1, 4, &[0.0, 0.0, 0.0, 100.0]);
        let c = DVector::zeros(1);
        assert_eq!(prune_by_norm(&data, &c, 1.0, &NormSpec::Euclidean).unwrap(), vec![0, 1, 2, 3]);
        assert_eq!(prune_by_norm(&data, &c, 0.75, &NormSpec::Euclidean).unwrap(), vec![0, 1, 2]);
        assert!(prune_by_norm(&data, &c, 0.0, &NormSpec::Euclidean).is_err());
    }

    fn profile_of(f: impl Fn(f64) -> f64, lo: f64, hi: f64, points: usize) -> ResilienceProfile {
        let grid: Vec<f64> = (0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect();
        let vals = grid.iter().map(|&u| f(u)).collect();
        ResilienceProfile::from_values(grid, vals, ProfileMethod::ExactVertices, 0).unwrap()
    }

    #[test]
    fn sigma_tilde_examples() {
        let p = profile_of(f64::sqrt, 0.01, 0.5, 20_000);
        assert_relative_eq!(sigma_tilde(&p, 0.125).unwrap(), 8f64.ln().sqrt(), epsilon = 1e-4);
        let p = profile_of(|u| u, 0.1, 0.6, 100);
        assert_relative_eq!(sigma_tilde(&p, 0.5).unwrap(), 0.5, epsilon = 1e-12);

        // sigma(u) = u^{1 - 1/r}: integrand u^{-2/r}, antiderivative u^{1-2/r} / (1 - 2/r)
        let r = 1.5;
        let eps: f64 = 0.1;
        let p = profile_of(|u: f64| u.powf(1.0 - 1.0 / r), 0.01, 0.5, 10_000);
        let a = 1.0 - 2.0 / r;
        let closed = ((0.5f64.powf(a) - (eps / 2.0).powf(a)) / a).sqrt();
        let got = sigma_tilde(&p, eps).unwrap();
        assert!((got - closed).abs() / closed < 0.01);
        // and the bound quoted with the (2/eps)^{2/r - 1} growth factor holds
        let growth = (r / (2.0 - r)) * ((2.0 / eps).powf(2.0 / r - 1.0) - 1.0);
        assert!(got * got <= growth * 1.01);

        assert!(matches!(sigma_tilde(&p, 0.01), Err(Error::GridCoverage { .. })));
    }

    #[test]
    fn profile_csv_fields() {
        assert_eq!(ProfileMethod::parse("exact_vertices").unwrap(), ProfileMethod::ExactVertices);
        assert!(ProfileMethod::parse("other").is_err());
    }
}
