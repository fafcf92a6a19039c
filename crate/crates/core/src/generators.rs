//! Synthetic datasets with known good points and population center.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedIndex;
use rand_distr::{Distribution, Pareto, StandardNormal, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenMeta {
    pub generator: String,
    pub params: BTreeMap<String, f64>,
    pub seed: u64,
}

impl GenMeta {
    fn new(generator: &str, seed: u64, params: &[(&str, f64)]) -> Self {
        GenMeta {
            generator: generator.to_string(),
            params: params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            seed,
        }
    }
}

/// Points as columns, with the good/bad labeling and the good population's mean.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub points: DMatrix<f64>,
    pub good_mask: Vec<bool>,
    pub true_center: DVector<f64>,
    pub meta: GenMeta,
}

impl LabeledDataset {
    pub fn n(&self) -> usize {
        self.points.ncols()
    }

    pub fn d(&self) -> usize {
        self.points.nrows()
    }

    pub fn good_indices(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.good_mask[i]).collect()
    }

    pub fn good_points(&self) -> DMatrix<f64> {
        crate::linalg::select_columns(&self.points, &self.good_indices())
    }

    pub fn alpha(&self) -> f64 {
        self.good_indices().len() as f64 / self.n().max(1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SbmAttack {
    /// Bad rows form a mirrored community on the complement of S.
    MirrorBlock,
    /// Every bad row points at the same small set of vertices.
    Hub,
    /// Bad rows are dense Erdos-Renyi rows.
    RandomDense,
}

impl SbmAttack {
    pub fn as_str(self) -> &'static str {
        match self {
            SbmAttack::MirrorBlock => "mirror-block",
            SbmAttack::Hub => "hub",
            SbmAttack::RandomDense => "random-dense",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mirror-block" => Ok(SbmAttack::MirrorBlock),
            "hub" => Ok(SbmAttack::Hub),
            "random-dense" => Ok(SbmAttack::RandomDense),
            _ => Err(Error::InvalidConfig(format!("unknown sbm attack {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Adversary {
    /// Resampled good points translated so the bad mean is exactly mu + delta.
    ClusterShift(Vec<f64>),
    /// `count - 1` translated copies of the good set, copy j shifted by j * shift.
    MirrorCopies { count: usize, shift: Vec<f64> },
    PointMass(Vec<f64>),
    /// Bad adjacency rows for a dataset produced by `gen_sbm`.
    SbmBlock(SbmAttack),
}

fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn outlier_count(n: usize, eps: f64) -> Result<usize> {
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::InvalidConfig(format!("eps = {eps} outside [0, 1)")));
    }
    Ok((eps * n as f64).round() as usize)
}

fn check_len(v: &[f64], d: usize, what: &str) -> Result<()> {
    if v.len() != d {
        return Err(Error::InvalidConfig(format!("{what} has length {} but d = {d}", v.len())));
    }
    Ok(())
}

/// Appends `n_bad` adversarial columns (MirrorCopies ignores `n_bad` and appends whole copies).
pub fn apply_adversary(good: LabeledDataset, strategy: &Adversary, n_bad: usize, seed: u64) -> Result<LabeledDataset> {
    let d = good.d();
    let mut rng = rng_for(seed ^ 0x5bd1_e995);
    let base: Vec<usize> = good.good_indices();
    let bad: DMatrix<f64> = match strategy {
        Adversary::ClusterShift(delta) => {
            check_len(delta, d, "shift")?;
            if n_bad > 0 && base.is_empty() {
                return Err(Error::InvalidInput("cluster shift needs good points to copy".into()));
            }
            let picks: Vec<usize> = (0..n_bad).map(|_| base[rng.random_range(0..base.len())]).collect();
            let mut cols = crate::linalg::select_columns(&good.points, &picks);
            if n_bad > 0 {
                let target = &good.true_center + DVector::from_column_slice(delta);
                let offset = target - crate::linalg::column_mean(&cols);
                for mut c in cols.column_iter_mut() {
                    c += &offset;
                }
            }
            cols
        }
        Adversary::MirrorCopies { count, shift } => {
            check_len(shift, d, "shift")?;
            if *count == 0 {
                return Err(Error::InvalidConfig("mirror copies needs count >= 1".into()));
            }
            let src = crate::linalg::select_columns(&good.points, &base);
            let m = src.ncols();
            let shift = DVector::from_column_slice(shift);
            DMatrix::from_fn(d, m * (count - 1), |r, c| src[(r, c % m)] + (c / m + 1) as f64 * shift[r])
        }
        Adversary::PointMass(loc) => {
            check_len(loc, d, "location")?;
            DMatrix::from_fn(d, n_bad, |r, _| loc[r])
        }
        Adversary::SbmBlock(attack) => {
            let a = good.meta.params.get("a").copied();
            let b = good.meta.params.get("b").copied();
            let (Some(a), Some(b)) = (a, b) else {
                return Err(Error::InvalidInput("sbm attack needs a dataset from gen_sbm".into()));
            };
            let s = base.len();
            if s + n_bad != d {
                return Err(Error::InvalidInput("sbm attack must fill the remaining vertices".into()));
            }
            sbm_bad_rows(d, s, n_bad, a, b, *attack, &mut rng)
        }
    };
    let n_good = good.n();
    let added = bad.ncols();
    let mut points = DMatrix::zeros(d, n_good + added);
    points.columns_mut(0, n_good).copy_from(&good.points);
    points.columns_mut(n_good, added).copy_from(&bad);
    let mut good_mask = good.good_mask;
    good_mask.extend(std::iter::repeat_n(false, added));
    Ok(LabeledDataset { points, good_mask, true_center: good.true_center, meta: good.meta })
}

/// E|<u, e_1>|^k for u uniform on the unit sphere in R^d.
pub fn sphere_abs_moment(d: usize, k: f64) -> f64 {
    let d = d as f64;
    (libm::lgamma(d / 2.0) + libm::lgamma((k + 1.0) / 2.0) - 0.5 * std::f64::consts::PI.ln() - libm::lgamma((d + k) / 2.0)).exp()
}

/// Good points with E|<x - mu, v>|^k = sigma_k^k ||v||^k (Gaussian when k is infinite), mu = 0.
pub fn gen_bounded_moments(n: usize, d: usize, eps: f64, sigma_k: f64, k: f64, adversary: &Adversary, seed: u64) -> Result<LabeledDataset> {
    if k.is_nan() || k < 2.0 {
        return Err(Error::InvalidConfig(format!("moment order k = {k} must be at least 2")));
    }
    if d == 0 || !(sigma_k > 0.0) {
        return Err(Error::InvalidConfig("need d >= 1 and sigma_k > 0".into()));
    }
    let n_bad = outlier_count(n, eps)?;
    let n_good = n - n_bad;
    let mut rng = rng_for(seed);
    let points = if k.is_infinite() {
        DMatrix::from_fn(d, n_good, |_, _| sigma_k * rng.sample::<f64, _>(StandardNormal))
    } else {
        // Pareto radius with tail index k + 1/2: E R^k = (2k + 1) x_m^k
        let shape = k + 0.5;
        let x_m = sigma_k / ((2.0 * k + 1.0) * sphere_abs_moment(d, k)).powf(1.0 / k);
        let radius = Pareto::new(x_m, shape).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let mut m = DMatrix::zeros(d, n_good);
        for j in 0..n_good {
            let r = radius.sample(&mut rng);
            let u = unit_direction(d, &mut rng);
            m.set_column(j, &(u * r));
        }
        m
    };
    // JSON has no infinity, so the Gaussian case is named instead of carrying k
    let meta = if k.is_infinite() {
        GenMeta::new("gaussian", seed, &[("n", n as f64), ("d", d as f64), ("eps", eps), ("sigma", sigma_k)])
    } else {
        GenMeta::new("bounded-moments", seed, &[("n", n as f64), ("d", d as f64), ("eps", eps), ("sigma_k", sigma_k), ("k", k)])
    };
    let good = LabeledDataset { points, good_mask: vec![true; n_good], true_center: DVector::zeros(d), meta };
    apply_adversary(good, adversary, n_bad, seed)
}

fn unit_direction(d: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    if d == 3 {
        let u: [f64; 3] = UnitSphere.sample(rng);
        return DVector::from_column_slice(&u);
    }
    loop {
        let g = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = g.norm();
        if norm > 0.0 {
            return g / norm;
        }
    }
}

/// Empirical distribution of 0-indexed draws from m categories.
pub fn empirical_distribution(draws: &[usize], m: usize) -> Vec<f64> {
    let mut out = vec![0.0; m];
    let w = 1.0 / draws.len().max(1) as f64;
    for &j in draws {
        out[j] += w;
    }
    out
}

/// Each good point is the empirical distribution of k iid draws from `pi`.
pub fn gen_dist_tuples(pi: &[f64], k: usize, n: usize, eps: f64, adversary: &Adversary, seed: u64) -> Result<LabeledDataset> {
    let m = pi.len();
    let total: f64 = pi.iter().sum();
    if m == 0 || pi.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidConfig("pi must be a probability vector".into()));
    }
    if k == 0 {
        return Err(Error::InvalidConfig("tuple size k must be positive".into()));
    }
    let n_bad = outlier_count(n, eps)?;
    let n_good = n - n_bad;
    let mut rng = rng_for(seed);
    let sampler = WeightedIndex::new(pi).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut points = DMatrix::zeros(m, n_good);
    let mut draws = vec![0usize; k];
    for j in 0..n_good {
        for slot in draws.iter_mut() {
            *slot = sampler.sample(&mut rng);
        }
        points.set_column(j, &DVector::from_vec(empirical_distribution(&draws, m)));
    }
    let meta = GenMeta::new("dist-tuples", seed, &[("m", m as f64), ("k", k as f64), ("n", n as f64), ("eps", eps)]);
    let good = LabeledDataset { points, good_mask: vec![true; n_good], true_center: DVector::from_column_slice(pi), meta };
    apply_adversary(good, adversary, n_bad, seed)
}

fn sbm_bad_rows(n: usize, s: usize, n_bad: usize, a: f64, b: f64, attack: SbmAttack, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let nf = n as f64;
    let mut out = DMatrix::zeros(n, n_bad);
    match attack {
        SbmAttack::MirrorBlock => {
            for c in 0..n_bad {
                for j in 0..n {
                    let p = if j < s { b / nf } else { a / nf };
                    if rng.random::<f64>() < p {
                        out[(j, c)] = 1.0;
                    }
                }
            }
        }
        SbmAttack::Hub => {
            let hubs = (a.ceil() as usize).clamp(1, n);
            for c in 0..n_bad {
                for h in 0..hubs {
                    out[((s + h) % n, c)] = 1.0;
                }
            }
        }
        SbmAttack::RandomDense => {
            let p = (2.0 * a / nf).min(1.0);
            for c in 0..n_bad {
                for j in 0..n {
                    if rng.random::<f64>() < p {
                        out[(j, c)] = 1.0;
                    }
                }
            }
        }
    }
    out
}

/// Directed semi-random SBM; S is the first round(alpha n) vertices and points are adjacency rows.
pub fn gen_sbm(n: usize, alpha: f64, a: f64, b: f64, attack: SbmAttack, seed: u64) -> Result<LabeledDataset> {
    if !(a > b) || b < 0.0 || a > n as f64 {
        return Err(Error::InvalidConfig(format!("need 0 <= b < a <= n, got a = {a}, b = {b}")));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidConfig(format!("alpha = {alpha} outside (0, 1]")));
    }
    let s = (alpha * n as f64).round() as usize;
    let nf = n as f64;
    let mut rng = rng_for(seed);
    let mut points = DMatrix::zeros(n, s);
    for i in 0..s {
        for j in 0..n {
            let p = if j < s { a / nf } else { b / nf };
            if rng.random::<f64>() < p {
                points[(j, i)] = 1.0;
            }
        }
    }
    let true_center = DVector::from_fn(n, |j, _| if j < s { a / nf } else { b / nf });
    let meta = GenMeta::new("sbm", seed, &[("n", nf), ("alpha", alpha), ("a", a), ("b", b)]);
    let good = LabeledDataset { points, good_mask: vec![true; s], true_center, meta };
    apply_adversary(good, &Adversary::SbmBlock(attack), n - s, seed)
}

/// Vertices whose estimated mean coordinate reaches (a + b) / (2n).
pub fn sbm_threshold(mu_hat: &[f64], a: f64, b: f64) -> Vec<usize> {
    let cut = (a + b) / (2.0 * mu_hat.len() as f64);
    (0..mu_hat.len()).filter(|&j| mu_hat[j] >= cut).collect()
}

/// Fraction of vertices misclassified by `recovered` against S = 0..s.
pub fn sbm_recovery_error(recovered: &[usize], s: usize, n: usize) -> f64 {
    let mut inside = vec![false; n];
    for &j in recovered {
        inside[j] = true;
    }
    let wrong = (0..n).filter(|&j| inside[j] != (j < s)).count();
    wrong as f64 / n as f64
}

/// Total variation distance.
pub fn tv_distance(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Standard basis e_1..e_n, all good, center 0.
pub fn gen_basis_counterexample(n: usize) -> LabeledDataset {
    LabeledDataset {
        points: DMatrix::identity(n, n),
        good_mask: vec![true; n],
        true_center: DVector::zeros(n),
        meta: GenMeta::new("basis", 0, &[("n", n as f64)]),
    }
}

/// (n/2)^{max(-1, k(1/p - 1))}: the half-set k-th moment of the basis set in l_p.
pub fn counterexample_moment(n: usize, p: f64, k: f64) -> f64 {
    (n as f64 / 2.0).powf((k * (1.0 / p - 1.0)).max(-1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gaussian_branch_without_outliers() {
        let ds = gen_bounded_moments(50, 3, 0.0, 1.0, f64::INFINITY, &Adversary::PointMass(vec![0.0; 3]), 1).unwrap();
        assert_eq!(ds.n(), 50);
        assert!(ds.good_mask.iter().all(|&g| g));
    }

    #[test]
    fn outlier_count_is_exact() {
        let ds = gen_bounded_moments(1000, 2, 0.1, 1.0, 4.0, &Adversary::PointMass(vec![5.0, 5.0]), 2).unwrap();
        assert_eq!(ds.good_mask.iter().filter(|&&g| !g).count(), 100);
        assert_eq!(ds.n(), 1000);
    }

    #[test]
    fn low_moment_order_rejected() {
        assert!(matches!(gen_bounded_moments(10, 2, 0.0, 1.0, 1.5, &Adversary::PointMass(vec![0.0; 2]), 0), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn sphere_moment_matches_known_cases() {
        // d = 1: |u| = 1; d = 3, k = 2: 1/3
        assert_relative_eq!(sphere_abs_moment(1, 3.0), 1.0, epsilon = 1e-12);
        assert_relative_eq!(sphere_abs_moment(3, 2.0), 1.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(sphere_abs_moment(5, 2.0), 0.2, epsilon = 1e-12);
    }

    #[test]
    fn small_tuple_example() {
        // draws (2, 4, 2) in 1-indexed categories
        let v = empirical_distribution(&[1, 3, 1], 5);
        let want = [0.0, 2.0 / 3.0, 0.0, 1.0 / 3.0, 0.0];
        for (a, b) in v.iter().zip(want) {
            assert_relative_eq!(*a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn tuples_live_on_the_simplex_grid() {
        let pi = vec![0.1, 0.2, 0.3, 0.4];
        let ds = gen_dist_tuples(&pi, 3, 200, 0.0, &Adversary::PointMass(vec![0.0; 4]), 3).unwrap();
        for c in ds.points.column_iter() {
            assert_relative_eq!(c.sum(), 1.0, epsilon = 1e-12);
            for &x in c.iter() {
                assert_relative_eq!((x * 3.0).round(), x * 3.0, epsilon = 1e-12);
            }
        }
        let ones = gen_dist_tuples(&pi, 1, 20, 0.0, &Adversary::PointMass(vec![0.0; 4]), 3).unwrap();
        assert!(ones.points.iter().all(|&x| x == 0.0 || x == 1.0));
        assert!(gen_dist_tuples(&[0.5, 0.6], 1, 5, 0.0, &Adversary::PointMass(vec![0.0; 2]), 0).is_err());
    }

    #[test]
    fn sbm_validation_and_complete_graph() {
        assert!(gen_sbm(10, 0.5, 2.0, 3.0, SbmAttack::Hub, 0).is_err());
        let ds = gen_sbm(30, 1.0, 30.0, 0.0, SbmAttack::Hub, 0).unwrap();
        assert!(ds.points.iter().all(|&x| x == 1.0));
    }

    #[test]
    fn sbm_empty_off_blocks() {
        let ds = gen_sbm(40, 1.0, 10.0, 0.0, SbmAttack::MirrorBlock, 4).unwrap();
        assert_eq!(ds.n(), 40);
        let ds = gen_sbm(40, 0.5, 10.0, 0.0, SbmAttack::MirrorBlock, 4).unwrap();
        for i in 0..20 {
            for j in 20..40 {
                assert_eq!(ds.points[(j, i)], 0.0);
            }
        }
    }

    #[test]
    fn mirror_copies_halve_alpha() {
        let base = gen_bounded_moments(20, 2, 0.0, 1.0, f64::INFINITY, &Adversary::PointMass(vec![0.0; 2]), 5).unwrap();
        let ds = apply_adversary(base, &Adversary::MirrorCopies { count: 2, shift: vec![10.0, 0.0] }, 0, 5).unwrap();
        assert_eq!(ds.n(), 40);
        assert_relative_eq!(ds.alpha(), 0.5);
    }

    #[test]
    fn cluster_shift_mean_is_exact() {
        let base = gen_bounded_moments(30, 2, 0.0, 1.0, f64::INFINITY, &Adversary::PointMass(vec![0.0; 2]), 6).unwrap();
        let ds = apply_adversary(base, &Adversary::ClusterShift(vec![3.0, -1.0]), 7, 6).unwrap();
        let bad: Vec<usize> = (0..ds.n()).filter(|&i| !ds.good_mask[i]).collect();
        let m = crate::linalg::column_mean(&crate::linalg::select_columns(&ds.points, &bad));
        assert_relative_eq!(m[0], 3.0, epsilon = 1e-12);
        assert_relative_eq!(m[1], -1.0, epsilon = 1e-12);
    }

    #[test]
    fn point_mass_shifts_naive_mean_by_eps_times_location() {
        let ds = gen_bounded_moments(100, 2, 0.1, 1.0, f64::INFINITY, &Adversary::PointMass(vec![100.0, 0.0]), 8).unwrap();
        let good_mean = crate::linalg::column_mean(&ds.good_points());
        let all_mean = crate::linalg::column_mean(&ds.points);
        let shift = all_mean - good_mean * 0.9;
        assert_relative_eq!(shift[0], 10.0, epsilon = 1e-12);
        assert_relative_eq!(shift[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn generators_are_deterministic() {
        let adv = Adversary::ClusterShift(vec![1.0, 1.0, 1.0]);
        let a = gen_bounded_moments(50, 3, 0.2, 1.0, 3.0, &adv, 11).unwrap();
        let b = gen_bounded_moments(50, 3, 0.2, 1.0, 3.0, &adv, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(gen_sbm(30, 0.5, 8.0, 2.0, SbmAttack::RandomDense, 3).unwrap(), gen_sbm(30, 0.5, 8.0, 2.0, SbmAttack::RandomDense, 3).unwrap());
    }

    #[test]
    fn counterexample_formula_values() {
        assert_relative_eq!(counterexample_moment(4, 2.0, 2.0), 0.5);
        assert_relative_eq!(counterexample_moment(8, 1.5, 2.0), 4f64.powf(-2.0 / 3.0), epsilon = 1e-15);
        assert_relative_eq!(counterexample_moment(16, 1.0, 2.0), 1.0);
    }
}
