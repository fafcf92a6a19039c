//! Maximization of PSD quadratic forms over l_q balls and its semidefinite relaxation.
//!
//! For q >= 2 the relaxation maximizes <G, Y> over PSD Y with ||diag(Y)||_{q/2} <= 1;
//! it is within a factor pi/2 of the true maximum. The relaxation is solved in
//! factored form Y = R R^T and certified from above by a diagonal dual matrix.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::linalg;
use crate::norms::{conjugate_exponent, lp, lp_dual_map};

const RESTARTS: usize = 64;
const MAX_ASCENT_STEPS: usize = 2000;
const STALL_WINDOW: usize = 50;
const STALL_REL: f64 = 1e-8;

/// A feasible dual direction and its quadratic value, a lower bound on the maximum.
#[derive(Debug, Clone)]
pub struct QuadLowerBound {
    pub value: f64,
    pub vector: DVector<f64>,
}

pub(crate) fn quad(g: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    v.dot(&(g * v))
}

fn random_unit_lq(d: usize, q: f64, rng: &mut impl Rng) -> DVector<f64> {
    loop {
        let v = DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let n = lp(v.as_slice(), q);
        if n > 0.0 {
            return v / n;
        }
    }
}

/// Monotone ascent of v^T G v over ||v||_q <= 1 by repeated linearization.
///
/// Each step moves to the dual-ball maximizer of <G v, .>; since the objective is
/// convex the value never decreases.
fn ascend(g: &DMatrix<f64>, q: f64, mut v: DVector<f64>) -> QuadLowerBound {
    let p = conjugate_exponent(q);
    let mut value = quad(g, &v);
    let mut window_start = value;
    for step in 1..=MAX_ASCENT_STEPS {
        let grad = g * &v;
        let next = DVector::from_vec(lp_dual_map(grad.as_slice(), p));
        let next_value = quad(g, &next);
        if next_value <= value {
            break;
        }
        v = next;
        value = next_value;
        if step % STALL_WINDOW == 0 {
            if value - window_start <= STALL_REL * value.abs() {
                break;
            }
            window_start = value;
        }
    }
    QuadLowerBound { value, vector: v }
}

/// Best lower bound on max_{||v||_q <= 1} v^T G v from `budget` sampled directions
/// followed by ascent restarts from the best samples and from fresh random points.
pub fn max_quadratic_lq(g: &DMatrix<f64>, q: f64, budget: usize, rng: &mut impl Rng) -> QuadLowerBound {
    let d = g.nrows();
    if q == 2.0 {
        let (val, vec) = linalg::top_eigenpair(g);
        return QuadLowerBound { value: val.max(0.0), vector: vec };
    }
    let mut samples: Vec<(f64, DVector<f64>)> = (0..budget.max(1))
        .map(|_| {
            let v = random_unit_lq(d, q, rng);
            (quad(g, &v), v)
        })
        .collect();
    samples.sort_by(|a, b| b.0.total_cmp(&a.0));
    samples.truncate(RESTARTS / 2);
    let mut starts: Vec<DVector<f64>> = samples.into_iter().map(|(_, v)| v).collect();
    while starts.len() < RESTARTS {
        starts.push(random_unit_lq(d, q, rng));
    }
    // the top eigenvector rescaled into the ball is a strong start
    let (_, top) = linalg::top_eigenpair(g);
    let n = lp(top.as_slice(), q);
    if n > 0.0 {
        starts.push(top / n);
    }
    starts
        .into_iter()
        .map(|v| ascend(g, q, v))
        .max_by(|a, b| a.value.total_cmp(&b.value))
        .expect("at least one start")
}

/// Approximate maximizer of the relaxation with a certified upper bound.
#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub y: DMatrix<f64>,
    /// <G, Y> for the returned feasible Y.
    pub value: f64,
    /// Upper bound on the relaxation optimum (hence on the l_q quadratic maximum).
    pub upper: f64,
}

/// Rescales the rows of `r` so that ||diag(R R^T)||_{q/2} = 1.
fn normalize_rows(r: &mut DMatrix<f64>, q: f64) {
    let norms: Vec<f64> = r.row_iter().map(|row| row.norm()).collect();
    let scale = lp(&norms, q);
    if scale > 0.0 {
        *r /= scale;
    }
}

/// One linearization step of the factored relaxation: rows of the new factor point
/// along the rows of G R, with lengths given by the l_q dual map of their norms.
fn factored_step(g: &DMatrix<f64>, r: &DMatrix<f64>, q: f64) -> DMatrix<f64> {
    let gr = g * r;
    let rho: Vec<f64> = gr.row_iter().map(|row| row.norm()).collect();
    let p = conjugate_exponent(q);
    let s = lp_dual_map(&rho, p);
    let mut next = r.clone();
    for i in 0..r.nrows() {
        if rho[i] > 0.0 {
            let row = gr.row(i) * (s[i] / rho[i]);
            next.set_row(i, &row);
        } else if q.is_finite() {
            next.row_mut(i).fill(0.0);
        }
    }
    if q.is_infinite() {
        // l_inf ball: every row with positive length sits on the boundary
        for i in 0..next.nrows() {
            let n = next.row(i).norm();
            if n > 0.0 {
                next.row_mut(i).scale_mut(1.0 / n);
            }
        }
    }
    next
}

fn factored_value(g: &DMatrix<f64>, r: &DMatrix<f64>) -> f64 {
    (r.transpose() * g * r).trace()
}

pub(crate) fn solve_factored(g: &DMatrix<f64>, q: f64, mut r: DMatrix<f64>) -> (f64, DMatrix<f64>) {
    normalize_rows(&mut r, q);
    let mut value = factored_value(g, &r);
    let mut window_start = value;
    for step in 1..=MAX_ASCENT_STEPS {
        let next = factored_step(g, &r, q);
        let next_value = factored_value(g, &next);
        if next_value <= value {
            break;
        }
        r = next;
        value = next_value;
        if step % STALL_WINDOW == 0 {
            if value - window_start <= 1e-12 * value.abs() {
                break;
            }
            window_start = value;
        }
    }
    (value, r)
}

/// Dual certificate: any lambda >= diag with Diag(lambda) - G PSD bounds the relaxation
/// by ||lambda||_{r*}, r = q/2. The multipliers are read off the primal point and
/// shifted until feasible; the trivial bound lambda_max(G) d^{1 - 2/q} is also used.
pub(crate) fn certify(g: &DMatrix<f64>, y: &DMatrix<f64>, q: f64) -> f64 {
    let d = g.nrows();
    let gy = g * y;
    let ymax = y.diagonal().max().max(0.0);
    let mut lambda: Vec<f64> = (0..d)
        .map(|i| {
            if y[(i, i)] > 1e-12 * ymax {
                gy[(i, i)] / y[(i, i)]
            } else {
                g[(i, i)].max(0.0)
            }
        })
        .collect();
    let slack = DMatrix::from_diagonal(&DVector::from_vec(lambda.clone())) - g;
    let (vals, _) = linalg::sym_eigen_desc(&slack);
    let min_eig = vals[vals.len() - 1];
    let shift = (-min_eig).max(0.0) * (1.0 + 1e-12) + 1e-14 * g.diagonal().abs().max();
    for l in lambda.iter_mut() {
        *l += shift;
    }
    let r = q / 2.0;
    let rstar = conjugate_exponent(r);
    let cert = lp(&lambda, rstar);
    let (top, _) = linalg::top_eigenpair(g);
    let crude = top.max(0.0) * (d as f64).powf(1.0 - 2.0 / q);
    cert.min(crude)
}

/// Solves max <G, Y> over PSD Y with ||diag Y||_{q/2} <= 1 approximately, from a few
/// starts including the rank-one lift of `warm` when supplied.
pub fn sdp_relaxation(g: &DMatrix<f64>, q: f64, warm: Option<&DVector<f64>>, rng: &mut impl Rng) -> SdpSolution {
    let d = g.nrows();
    if d == 0 {
        return SdpSolution { y: DMatrix::zeros(0, 0), value: 0.0, upper: 0.0 };
    }
    if g.iter().all(|&x| x == 0.0) {
        let mut y = DMatrix::zeros(d, d);
        y[(0, 0)] = 1.0;
        return SdpSolution { y, value: 0.0, upper: 0.0 };
    }
    if q == 2.0 {
        let (val, v) = linalg::top_eigenpair(g);
        return SdpSolution { y: &v * v.transpose(), value: val, upper: val };
    }
    let mut starts = Vec::new();
    if let Some(w) = warm {
        let mut r = DMatrix::from_fn(d, d, |_, _| 1e-3 * rng.sample::<f64, _>(StandardNormal));
        r.set_column(0, w);
        starts.push(r);
    }
    for _ in 0..4 {
        starts.push(DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal)));
    }
    let (mut value, r) = starts
        .into_iter()
        .map(|r0| solve_factored(g, q, r0))
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .expect("nonempty starts");
    let mut y = &r * r.transpose();
    if let Some(w) = warm {
        let lift = quad(g, w);
        if lift > value {
            value = lift;
            y = w * w.transpose();
        }
    }
    let upper = certify(g, &y, q).max(value);
    SdpSolution { y, value, upper }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn all_ones_under_linf_has_value_four() {
        let g = DMatrix::from_element(2, 2, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sol = sdp_relaxation(&g, f64::INFINITY, None, &mut rng);
        assert_relative_eq!(sol.value, 4.0, epsilon = 1e-9);
        assert!(sol.upper >= sol.value);
        assert_relative_eq!(sol.upper, 4.0, epsilon = 1e-6);
    }

    #[test]
    fn sandwich_holds_on_random_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for &q in &[3.0, 4.0, 8.0, f64::INFINITY] {
            for _ in 0..10 {
                let b = DMatrix::from_fn(4, 4, |_, _| rng.sample::<f64, _>(StandardNormal));
                let g = &b * b.transpose();
                let lower = max_quadratic_lq(&g, q, 2000, &mut rng);
                let sol = sdp_relaxation(&g, q, Some(&lower.vector), &mut rng);
                assert!(sol.value >= lower.value - 1e-9);
                assert!(sol.upper >= sol.value - 1e-9);
                assert!(sol.upper <= std::f64::consts::FRAC_PI_2 * lower.value * 1.05, "q={q} {} {}", sol.upper, lower.value);
            }
        }
    }

    #[test]
    fn ascent_stays_in_the_ball() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let b = DMatrix::from_fn(5, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
        let g = &b * b.transpose();
        let lb = max_quadratic_lq(&g, 3.0, 100, &mut rng);
        assert!(lp(lb.vector.as_slice(), 3.0) <= 1.0 + 1e-12);
        assert_relative_eq!(lb.value, quad(&g, &lb.vector), epsilon = 1e-12);
    }
}
