//! Large cores with bounded second moments inside sets with bounded first moments.
//!
//! Solves min over fractional c (0 <= c <= 1, sum c >= keep n) of
//! max_{||v||_* <= 1} (1/n) sum_i c_i <x_i, v>^2 by projected subgradient steps
//! against the kappa-oracle, then keeps the points with c_i >= 1/2.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::meanest::Lmo;
use crate::norms::{induced_two_to_psi, CertifiedInterval, NormSpec, VertexMode};
use crate::resilience::PointSet;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoreConfig {
    pub max_iter: usize,
    /// Relative primal-dual gap at which the solver stops.
    pub tol: f64,
    pub mode: VertexMode,
    /// Direction budget for the final certificate.
    pub budget: usize,
    pub seed: u64,
}

impl Default for CoreConfig {
    fn default() -> Self {
        CoreConfig { max_iter: 500, tol: 1e-6, mode: VertexMode::Native, budget: 2000, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoreResult {
    pub weights: Vec<f64>,
    pub core: Vec<usize>,
    pub certified_variance: CertifiedInterval,
    pub target_keep: f64,
    pub iterations: usize,
    /// The gap did not close within the iteration cap; the best iterate is returned.
    pub stalled: bool,
    /// Certified upper bound on the fractional objective at `weights`.
    pub continuous_objective: f64,
    /// The same objective with c replaced by the indicator of `core`.
    pub rounded_objective: f64,
    /// Lower bound on the fractional optimum from the averaged dual matrix.
    pub dual_bound: f64,
}

#[derive(Serialize, Deserialize)]
struct VarianceJson {
    lower: f64,
    upper: f64,
}

#[derive(Serialize, Deserialize)]
struct CoreJson {
    weights: Vec<f64>,
    core: Vec<usize>,
    variance: VarianceJson,
    iterations: usize,
}

impl CoreResult {
    pub fn to_json(&self) -> Result<String> {
        let wire = CoreJson {
            weights: self.weights.clone(),
            core: self.core.clone(),
            variance: VarianceJson { lower: self.certified_variance.lower, upper: self.certified_variance.upper },
            iterations: self.iterations,
        };
        Ok(serde_json::to_string_pretty(&wire)?)
    }
}

/// Euclidean projection onto { 0 <= c <= 1, sum c >= mass }.
pub fn project_box_mass(c: &[f64], mass: f64) -> Vec<f64> {
    let clipped: Vec<f64> = c.iter().map(|x| x.clamp(0.0, 1.0)).collect();
    if clipped.iter().sum::<f64>() >= mass {
        return clipped;
    }
    // the mass constraint is active: shift up by theta > 0
    let total = |t: f64| -> f64 { c.iter().map(|x| (x + t).clamp(0.0, 1.0)).sum() };
    let mut lo = 0.0;
    let mut hi = 1.0 - c.iter().cloned().fold(f64::INFINITY, f64::min);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if total(mid) >= mass {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let mut out: Vec<f64> = c.iter().map(|x| (x + hi).clamp(0.0, 1.0)).collect();
    // distribute the rounding deficit over coordinates with room
    let deficit = mass - out.iter().sum::<f64>();
    if deficit > 0.0 {
        let room: Vec<usize> = (0..out.len()).filter(|&i| out[i] < 1.0).collect();
        let share = deficit / room.len().max(1) as f64;
        for i in room {
            out[i] = (out[i] + share).min(1.0);
        }
    }
    out
}

fn weighted_second_moment(x: &DMatrix<f64>, c: &[f64], n: f64) -> DMatrix<f64> {
    let mut scaled = x.clone();
    for (i, &ci) in c.iter().enumerate() {
        scaled.column_mut(i).scale_mut(ci / n);
    }
    linalg::symmetrize(&(scaled * x.transpose()))
}

/// Sum of the smallest `mass` entries, with a fractional last entry.
fn smallest_mass(values: &[f64], mass: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mut left = mass;
    let mut sum = 0.0;
    for x in v {
        if left <= 0.0 {
            break;
        }
        let take = left.min(1.0);
        sum += take * x;
        left -= take;
    }
    sum
}

/// max_{||v||_* <= 1} (1/|core|) sum_{i in core} <x_i - mu, v>^2, via the induced 2->psi norm.
pub fn certify_core_variance(core: &DMatrix<f64>, mu: &DVector<f64>, spec: &NormSpec, mode: VertexMode, budget: usize, seed: u64) -> Result<CertifiedInterval> {
    let m = core.ncols();
    if m == 0 {
        return Err(Error::InvalidInput("empty core".into()));
    }
    let centered = linalg::center_columns(core, mu);
    let norm = induced_two_to_psi(&centered, spec, mode, budget.max(1), seed)?;
    Ok(norm.map_monotone(|s| s * s / m as f64))
}

/// Finds weights and a rounded core of size >= (2 keep - 1) n with certified variance.
pub fn find_core(s: &PointSet, keep: f64, spec: &NormSpec, cfg: &CoreConfig) -> Result<CoreResult> {
    if !(keep > 0.5 && keep < 1.0) {
        return Err(Error::InvalidConfig(format!("keep = {keep} must lie in (1/2, 1)")));
    }
    if s.n() == 0 || s.points.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("point set must be nonempty and finite".into()));
    }
    spec.validate()?;
    let x = s.centered();
    let (d, n) = x.shape();
    let nf = n as f64;
    let mass = keep * nf;
    let mut lmo = Lmo::new(spec, cfg.mode, d, cfg.seed)?;

    let mut c = vec![keep; n];
    let mut best_c = c.clone();
    let mut best_upper = f64::INFINITY;
    let mut best_lower = f64::NEG_INFINITY;
    let mut y_sum = DMatrix::zeros(d, d);
    let mut iterations = 0;
    let mut stalled = true;
    let radius = nf.sqrt();
    for t in 1..=cfg.max_iter {
        iterations = t;
        let m = weighted_second_moment(&x, &c, nf);
        let (y, _, upper) = lmo.solve(&m);
        if upper < best_upper {
            best_upper = upper;
            best_c = c.clone();
        }
        y_sum += &y;
        let y_avg = &y_sum / t as f64;
        let yx = &y_avg * &x;
        let tau_avg: Vec<f64> = (0..n).map(|i| x.column(i).dot(&yx.column(i)) / nf).collect();
        best_lower = best_lower.max(smallest_mass(&tau_avg, mass));
        if best_upper - best_lower <= cfg.tol * best_upper.abs() || best_upper <= 0.0 {
            stalled = false;
            break;
        }
        let yx = &y * &x;
        let grad: Vec<f64> = (0..n).map(|i| x.column(i).dot(&yx.column(i)) / nf).collect();
        let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if gnorm == 0.0 {
            stalled = false;
            break;
        }
        let step = 0.5 * radius / (gnorm * (t as f64).sqrt());
        let moved: Vec<f64> = c.iter().zip(&grad).map(|(ci, gi)| ci - step * gi).collect();
        c = project_box_mass(&moved, mass);
    }

    let core: Vec<usize> = (0..n).filter(|&i| best_c[i] >= 0.5).collect();
    let indicator: Vec<f64> = (0..n).map(|i| if best_c[i] >= 0.5 { 1.0 } else { 0.0 }).collect();
    let (_, rounded, _) = lmo.solve(&weighted_second_moment(&x, &indicator, nf));
    let core_points = linalg::select_columns(&s.points, &core);
    let certified_variance = certify_core_variance(&core_points, &s.center(), spec, cfg.mode, cfg.budget, cfg.seed)?;
    Ok(CoreResult {
        weights: best_c,
        core,
        certified_variance,
        target_keep: keep,
        iterations,
        stalled,
        continuous_objective: best_upper.max(0.0),
        rounded_objective: rounded,
        dual_bound: best_lower.max(0.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::resilience::{first_moment, SigmaOptions};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn projection_respects_box_and_mass() {
        let p = project_box_mass(&[0.2, 0.1, 2.0, -1.0], 2.5);
        assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
        assert!(p.iter().sum::<f64>() >= 2.5 - 1e-12);
        let q = project_box_mass(&[0.9, 0.9, 0.9], 2.0);
        assert_eq!(q, vec![0.9, 0.9, 0.9]);
    }

    #[test]
    fn constant_points_have_zero_variance() {
        let s = PointSet::new(DMatrix::from_fn(2, 6, |r, _| r as f64 + 1.0));
        let r = find_core(&s, 0.75, &NormSpec::Euclidean, &CoreConfig::default()).unwrap();
        assert_eq!(r.core, (0..6).collect::<Vec<_>>());
        assert_eq!(r.certified_variance.upper, 0.0);
    }

    #[test]
    fn certify_examples() {
        let mu = DVector::from_vec(vec![1.0, 2.0]);
        let single = DMatrix::from_column_slice(2, 1, &[1.0, 2.0]);
        let v = certify_core_variance(&single, &mu, &NormSpec::Euclidean, VertexMode::Native, 10, 0).unwrap();
        assert_eq!((v.lower, v.upper), (0.0, 0.0));

        let pm = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 0.0, 0.0]);
        let v = certify_core_variance(&pm, &DVector::zeros(2), &NormSpec::Euclidean, VertexMode::Native, 10, 0).unwrap();
        assert_relative_eq!(v.lower, 1.0, epsilon = 1e-12);
        assert_relative_eq!(v.upper, 1.0, epsilon = 1e-12);

        // l1: the dual ball is the cube, maximize over sign vectors by brute force
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts = DMatrix::from_fn(3, 5, |_, _| rng.random_range(-1.0..1.0));
        let mu = DVector::from_vec(vec![0.1, -0.2, 0.3]);
        let v = certify_core_variance(&pts, &mu, &NormSpec::L1ViaP { m: 4 }, VertexMode::ExactL1, 10, 0).unwrap();
        let mut best: f64 = 0.0;
        for mask in 0..8u32 {
            let s = DVector::from_iterator(3, (0..3).map(|j| if mask >> j & 1 == 1 { 1.0 } else { -1.0 }));
            let total: f64 = (0..5).map(|i| (pts.column(i) - &mu).dot(&s).powi(2)).sum();
            best = best.max(total / 5.0);
        }
        assert_relative_eq!(v.upper, best, epsilon = 1e-9);
        assert!(v.is_exact());
    }

    #[test]
    fn basis_core_meets_the_first_moment_bound() {
        let n = 8;
        let s = PointSet::with_center(DMatrix::identity(n, n), DVector::zeros(n));
        let spec = NormSpec::PNorm { p: 2.0 };
        let r = find_core(&s, 0.75, &spec, &CoreConfig::default()).unwrap();
        assert!(r.core.len() >= 4);
        let sigma = first_moment(&s, &spec, &SigmaOptions::default().with_budget(2000)).unwrap();
        assert!(r.certified_variance.upper <= 32.0 * sigma.lower.powi(2));
        assert!(r.rounded_objective <= 2.0 * r.continuous_objective * (1.0 + 1e-9));
        let total: f64 = r.weights.iter().sum();
        assert!(total >= 0.75 * n as f64 - 1e-9);
    }

    #[test]
    fn gaussian_core_in_lp() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let pts = DMatrix::from_fn(5, 200, |_, _| rng.sample::<f64, _>(StandardNormal));
        let s = PointSet::new(pts);
        let spec = NormSpec::PNorm { p: 1.5 };
        let cfg = CoreConfig { max_iter: 200, ..Default::default() };
        let r = find_core(&s, 0.75, &spec, &cfg).unwrap();
        assert!(r.core.len() >= 100);
        let sigma = first_moment(&s, &spec, &SigmaOptions::default().with_budget(2000)).unwrap();
        let gamma = spec.gamma().unwrap();
        assert!(r.certified_variance.upper <= 32.0 * sigma.lower.powi(2) / gamma);
        assert!(r.dual_bound <= r.continuous_objective + 1e-12);
    }

    #[test]
    fn keep_one_is_rejected() {
        let s = PointSet::scalars(&[0.0, 1.0]);
        assert!(matches!(find_core(&s, 1.0, &NormSpec::Euclidean, &CoreConfig::default()), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn json_shape() {
        let s = PointSet::scalars(&[0.0, 1.0, -1.0, 0.5]);
        let r = find_core(&s, 0.75, &NormSpec::Euclidean, &CoreConfig::default()).unwrap();
        let v: serde_json::Value = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert!(v["weights"].is_array() && v["core"].is_array());
        assert!(v["variance"]["lower"].is_number() && v["variance"]["upper"].is_number());
        assert!(v["iterations"].is_number());
    }
}
