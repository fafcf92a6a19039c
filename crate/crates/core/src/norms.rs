//! Norm family, dual norms, induced 2->psi norms and convex-projection primitives.
//!
//! Every estimator in the crate works with a [`NormSpec`] describing the norm the
//! estimation error is measured in. The solvers only ever touch the norm through
//! three views: its value, its dual, and (for polyhedral balls) the finite set of
//! dual vertices whose inner products realize it.

use std::fmt;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::quadratic;

/// Default cap on the number of dual-ball vertices enumerated.
pub const DEFAULT_VERTEX_CAP: usize = 1 << 20;

/// Which norm the estimation lives in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NormSpecWire", into = "NormSpecWire")]
pub enum NormSpec {
    Euclidean,
    /// l_p with 1 < p <= 2.
    PNorm { p: f64 },
    /// l_p with p = 1 + 1/ln(m), the strongly convex stand-in for l_1 in dimension m.
    L1ViaP { m: usize },
    /// Sum of the `k_top` largest absolute coordinates.
    TopKL1 { k_top: usize },
}

#[derive(Serialize, Deserialize)]
struct NormSpecWire {
    kind: String,
    p: Option<f64>,
    k_top: Option<usize>,
    m: Option<usize>,
}

impl From<NormSpec> for NormSpecWire {
    fn from(spec: NormSpec) -> Self {
        let mut wire = NormSpecWire { kind: spec.kind_name().to_string(), p: None, k_top: None, m: None };
        match spec {
            NormSpec::Euclidean => {}
            NormSpec::PNorm { p } => wire.p = Some(p),
            NormSpec::L1ViaP { m } => wire.m = Some(m),
            NormSpec::TopKL1 { k_top } => wire.k_top = Some(k_top),
        }
        wire
    }
}

impl TryFrom<NormSpecWire> for NormSpec {
    type Error = Error;

    fn try_from(w: NormSpecWire) -> Result<Self> {
        let missing = |f: &str| Error::Format(format!("norm kind {} requires field {f}", w.kind));
        let spec = match w.kind.as_str() {
            "euclidean" => NormSpec::Euclidean,
            "pnorm" => NormSpec::PNorm { p: w.p.ok_or_else(|| missing("p"))? },
            "l1_via_p" => NormSpec::L1ViaP { m: w.m.ok_or_else(|| missing("m"))? },
            "top_k_l1" => NormSpec::TopKL1 { k_top: w.k_top.ok_or_else(|| missing("k_top"))? },
            other => return Err(Error::Format(format!("unknown norm kind {other:?}"))),
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl fmt::Display for NormSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NormSpec::Euclidean => write!(f, "l2"),
            NormSpec::PNorm { p } => write!(f, "lp:{p}"),
            NormSpec::L1ViaP { m } => write!(f, "l1(m={m})"),
            NormSpec::TopKL1 { k_top } => write!(f, "topk:{k_top}"),
        }
    }
}

impl NormSpec {
    pub fn pnorm(p: f64) -> Result<Self> {
        let spec = NormSpec::PNorm { p };
        spec.validate()?;
        Ok(spec)
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            NormSpec::Euclidean => "euclidean",
            NormSpec::PNorm { .. } => "pnorm",
            NormSpec::L1ViaP { .. } => "l1_via_p",
            NormSpec::TopKL1 { .. } => "top_k_l1",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            NormSpec::Euclidean => Ok(()),
            NormSpec::PNorm { p } if p.is_finite() && p > 1.0 && p <= 2.0 => Ok(()),
            NormSpec::PNorm { p } => Err(Error::InvalidConfig(format!("p = {p} outside (1, 2]"))),
            // p = 1 + 1/ln m <= 2 needs m >= e
            NormSpec::L1ViaP { m } if m >= 3 => Ok(()),
            NormSpec::L1ViaP { m } => Err(Error::InvalidConfig(format!("m = {m} must be at least 3"))),
            NormSpec::TopKL1 { k_top } if k_top >= 1 => Ok(()),
            NormSpec::TopKL1 { .. } => Err(Error::InvalidConfig("k_top must be positive".into())),
        }
    }

    /// Primal exponent, when the norm is an l_p norm.
    pub fn p(&self) -> Option<f64> {
        match *self {
            NormSpec::Euclidean => Some(2.0),
            NormSpec::PNorm { p } => Some(p),
            NormSpec::L1ViaP { m } => Some(1.0 + 1.0 / (m as f64).ln()),
            NormSpec::TopKL1 { .. } => None,
        }
    }

    /// Dual exponent q with 1/p + 1/q = 1.
    pub fn q(&self) -> Option<f64> {
        self.p().map(conjugate_exponent)
    }

    /// Strong-convexity constant: p - 1 for l_p, none for the top-k norm.
    pub fn gamma(&self) -> Option<f64> {
        self.p().map(|p| p - 1.0)
    }

    /// Resolve the norm actually evaluated under a vertex mode.
    pub fn resolve(&self, mode: VertexMode) -> ResolvedNorm {
        match (*self, mode) {
            (NormSpec::Euclidean, _) => ResolvedNorm::L2,
            (NormSpec::PNorm { p }, _) if p == 2.0 => ResolvedNorm::L2,
            (NormSpec::PNorm { p }, _) => ResolvedNorm::Lp { p },
            (NormSpec::L1ViaP { .. }, VertexMode::ExactL1) => ResolvedNorm::L1,
            (spec @ NormSpec::L1ViaP { .. }, VertexMode::Native) => ResolvedNorm::Lp { p: spec.p().unwrap() },
            (NormSpec::TopKL1 { k_top }, _) => ResolvedNorm::TopK { k: k_top },
        }
    }
}

/// Whether an `L1ViaP` norm is evaluated as its l_p surrogate or as exact l_1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum VertexMode {
    #[default]
    Native,
    ExactL1,
}

/// A norm after resolving the vertex mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ResolvedNorm {
    L2,
    Lp { p: f64 },
    L1,
    TopK { k: usize },
}

impl ResolvedNorm {
    pub fn eval(&self, v: &[f64]) -> f64 {
        match *self {
            ResolvedNorm::L2 => lp(v, 2.0),
            ResolvedNorm::Lp { p } => lp(v, p),
            ResolvedNorm::L1 => v.iter().map(|x| x.abs()).sum(),
            ResolvedNorm::TopK { k } => top_k_abs_sum(v, k),
        }
    }

    pub fn dual(&self, v: &[f64]) -> f64 {
        match *self {
            ResolvedNorm::L2 => lp(v, 2.0),
            ResolvedNorm::Lp { p } => lp(v, conjugate_exponent(p)),
            ResolvedNorm::L1 => linf(v),
            ResolvedNorm::TopK { k } => {
                let l1: f64 = v.iter().map(|x| x.abs()).sum();
                linf(v).max(l1 / k as f64)
            }
        }
    }

    /// A maximizer of <g, v> over the dual unit ball; the maximum equals `eval(g)`.
    pub fn dual_argmax(&self, g: &[f64]) -> Vec<f64> {
        match *self {
            ResolvedNorm::L2 => {
                let n = lp(g, 2.0);
                if n == 0.0 {
                    return vec![0.0; g.len()];
                }
                g.iter().map(|x| x / n).collect()
            }
            ResolvedNorm::Lp { p } => lp_dual_map(g, p),
            ResolvedNorm::L1 => g.iter().map(|&x| sign(x)).collect(),
            ResolvedNorm::TopK { k } => {
                let mut out = vec![0.0; g.len()];
                for i in top_k_indices(g, k) {
                    out[i] = sign(g[i]);
                }
                out
            }
        }
    }

    pub fn is_polyhedral(&self) -> bool {
        matches!(self, ResolvedNorm::L1 | ResolvedNorm::TopK { .. })
    }

    /// Dual exponent for the smooth kinds.
    pub fn dual_exponent(&self) -> Option<f64> {
        match *self {
            ResolvedNorm::L2 => Some(2.0),
            ResolvedNorm::Lp { p } => Some(conjugate_exponent(p)),
            _ => None,
        }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn conjugate_exponent(p: f64) -> f64 {
    if p == 1.0 {
        f64::INFINITY
    } else if p.is_infinite() {
        1.0
    } else {
        p / (p - 1.0)
    }
}

/// l_p norm, computed with scaling so large and tiny entries do not overflow.
pub(crate) fn lp(v: &[f64], p: f64) -> f64 {
    let m = linf(v);
    if m == 0.0 {
        return 0.0;
    }
    if p.is_infinite() {
        return m;
    }
    if p == 2.0 {
        return m * v.iter().map(|x| (x / m) * (x / m)).sum::<f64>().sqrt();
    }
    m * v.iter().map(|x| (x.abs() / m).powf(p)).sum::<f64>().powf(1.0 / p)
}

fn linf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

fn top_k_indices(v: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[b].abs().total_cmp(&v[a].abs()).then(a.cmp(&b)));
    idx.truncate(k.min(v.len()));
    idx
}

fn top_k_abs_sum(v: &[f64], k: usize) -> f64 {
    top_k_indices(v, k).into_iter().map(|i| v[i].abs()).sum()
}

/// argmax of <g, v> over the unit l_q ball, q the conjugate of `p`.
pub(crate) fn lp_dual_map(g: &[f64], p: f64) -> Vec<f64> {
    let n = lp(g, p);
    if n == 0.0 {
        return vec![0.0; g.len()];
    }
    if p == 1.0 {
        return g.iter().map(|&x| sign(x)).collect();
    }
    g.iter().map(|&x| sign(x) * (x.abs() / n).powf(p - 1.0)).collect()
}

fn check_finite(v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput("non-finite entry in vector".into()))
    }
}

/// ||v|| under `spec`.
pub fn norm_eval(v: &[f64], spec: &NormSpec) -> Result<f64> {
    norm_eval_mode(v, spec, VertexMode::Native)
}

pub fn norm_eval_mode(v: &[f64], spec: &NormSpec, mode: VertexMode) -> Result<f64> {
    check_finite(v)?;
    Ok(spec.resolve(mode).eval(v))
}

/// ||v||_* under `spec`.
pub fn dual_norm_eval(v: &[f64], spec: &NormSpec) -> Result<f64> {
    dual_norm_eval_mode(v, spec, VertexMode::Native)
}

pub fn dual_norm_eval_mode(v: &[f64], spec: &NormSpec, mode: VertexMode) -> Result<f64> {
    check_finite(v)?;
    Ok(spec.resolve(mode).dual(v))
}

/// Finite set of dual vectors realizing a polyhedral norm.
#[derive(Debug, Clone, PartialEq)]
pub enum SupportSet {
    Vertices(Vec<Vec<f64>>),
    NotPolyhedral,
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k.min(n));
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Number of dual vertices `support_vertices` would return, if polyhedral.
pub fn vertex_count(resolved: &ResolvedNorm, d: usize) -> Option<f64> {
    match *resolved {
        ResolvedNorm::L1 => Some(2f64.powi(d as i32)),
        ResolvedNorm::TopK { k } => {
            let k = k.min(d);
            Some(binomial(d, k) * 2f64.powi(k as i32))
        }
        _ => None,
    }
}

/// Dual-ball vertices V with ||y|| = max_{v in V} <y, v>.
pub fn support_vertices(spec: &NormSpec, d: usize, mode: VertexMode, cap: usize) -> Result<SupportSet> {
    if d == 0 {
        return Err(Error::InvalidInput("dimension must be at least 1".into()));
    }
    let resolved = spec.resolve(mode);
    let Some(count) = vertex_count(&resolved, d) else {
        return Ok(SupportSet::NotPolyhedral);
    };
    if count > cap as f64 {
        return Err(Error::TooManyVertices { count, cap });
    }
    let k = match resolved {
        ResolvedNorm::L1 => d,
        ResolvedNorm::TopK { k } => k.min(d),
        _ => unreachable!(),
    };
    let mut out = Vec::with_capacity(count as usize);
    let mut support: Vec<usize> = (0..k).collect();
    loop {
        for signs in 0u64..(1u64 << k) {
            let mut v = vec![0.0; d];
            for (bit, &i) in support.iter().enumerate() {
                v[i] = if signs >> bit & 1 == 1 { -1.0 } else { 1.0 };
            }
            out.push(v);
        }
        if !next_combination(&mut support, d) {
            break;
        }
    }
    Ok(SupportSet::Vertices(out))
}

/// Advances a sorted k-subset of 0..n in lexicographic order.
pub(crate) fn next_combination(c: &mut [usize], n: usize) -> bool {
    let k = c.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if c[i] < n - k + i {
            c[i] += 1;
            for j in i + 1..k {
                c[j] = c[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// How a [`CertifiedInterval`] was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CertMethod {
    Exact,
    VertexEnum,
    SampledDirections,
    SdpSandwich,
}

/// Two-sided bound on a quantity that is not always computable exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertifiedInterval {
    pub lower: f64,
    pub upper: f64,
    pub method: CertMethod,
}

impl CertifiedInterval {
    pub fn exact(value: f64, method: CertMethod) -> Self {
        CertifiedInterval { lower: value, upper: value, method }
    }

    pub fn is_exact(&self) -> bool {
        self.lower == self.upper
    }

    pub fn map_monotone(self, f: impl Fn(f64) -> f64) -> Self {
        CertifiedInterval { lower: f(self.lower), upper: f(self.upper), method: self.method }
    }
}

/// Bounds on ||A||_{2->psi} = sup_{|u|_2 <= 1} ||A u||; `a` holds the points as columns.
///
/// Exact for Euclidean and polyhedral norms. For l_p the lower end is the best
/// sampled or ascended dual direction and the upper end comes from the dual
/// certificate of the semidefinite relaxation.
pub fn induced_two_to_psi(
    a: &DMatrix<f64>,
    spec: &NormSpec,
    mode: VertexMode,
    budget: usize,
    seed: u64,
) -> Result<CertifiedInterval> {
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("non-finite matrix entry".into()));
    }
    let d = a.nrows();
    let resolved = spec.resolve(mode);
    if a.ncols() == 0 || d == 0 {
        return Ok(CertifiedInterval::exact(0.0, CertMethod::Exact));
    }
    match resolved {
        ResolvedNorm::L2 => Ok(CertifiedInterval::exact(linalg::spectral_norm(a), CertMethod::Exact)),
        ResolvedNorm::L1 | ResolvedNorm::TopK { .. } => {
            let SupportSet::Vertices(vs) = support_vertices(spec, d, mode, DEFAULT_VERTEX_CAP)? else {
                unreachable!("polyhedral norms always have vertices")
            };
            let at = a.transpose();
            let best = vs
                .iter()
                .map(|v| {
                    let proj = &at * nalgebra::DVector::from_column_slice(v);
                    proj.norm_squared()
                })
                .fold(0.0, f64::max);
            Ok(CertifiedInterval::exact(best.sqrt(), CertMethod::VertexEnum))
        }
        ResolvedNorm::Lp { p } => {
            if budget == 0 {
                return Err(Error::InvalidConfig("direction budget must be positive for l_p".into()));
            }
            let q = conjugate_exponent(p);
            let gram = a * a.transpose();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let lower = quadratic::max_quadratic_lq(&gram, q, budget, &mut rng);
            let sdp = quadratic::sdp_relaxation(&gram, q, Some(&lower.vector), &mut rng);
            Ok(CertifiedInterval {
                lower: lower.value.max(0.0).sqrt(),
                upper: sdp.upper.max(lower.value).max(0.0).sqrt(),
                method: CertMethod::SdpSandwich,
            })
        }
    }
}

/// Euclidean projection onto { u : 0 <= u_j <= cap, sum_j u_j = 1 }.
pub fn capped_simplex_project(w: &[f64], cap: f64) -> Result<Vec<f64>> {
    let n = w.len();
    if n == 0 || !(cap > 0.0) || cap * (n as f64) < 1.0 - 1e-12 {
        return Err(Error::InfeasibleCap { cap, len: n });
    }
    check_finite(w)?;
    let clip = |theta: f64| -> Vec<f64> { w.iter().map(|&x| (x - theta).clamp(0.0, cap)).collect() };
    let total = |theta: f64| -> f64 { w.iter().map(|&x| (x - theta).clamp(0.0, cap)).sum() };
    // sum of clip(w - theta) is nonincreasing in theta
    let mut lo = w.iter().cloned().fold(f64::INFINITY, f64::min) - cap;
    let mut hi = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if total(mid) >= 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * (1.0 + lo.abs()) {
            break;
        }
    }
    // Solve the linear piece exactly for the coordinates strictly inside the box.
    let theta = 0.5 * (lo + hi);
    let mut free_sum = 0.0;
    let mut free = 0usize;
    let mut capped = 0usize;
    for &x in w {
        let u = x - theta;
        if u >= cap {
            capped += 1;
        } else if u > 0.0 {
            free += 1;
            free_sum += x;
        }
    }
    let theta = if free > 0 {
        (free_sum + capped as f64 * cap - 1.0) / free as f64
    } else {
        theta
    };
    let mut u = clip(theta);
    // absorb the last rounding error into the largest free coordinate
    let s: f64 = u.iter().sum();
    if let Some(j) = (0..n).filter(|&j| u[j] > 0.0 && u[j] < cap).max_by(|&a, &b| u[a].total_cmp(&u[b])) {
        u[j] = (u[j] + 1.0 - s).clamp(0.0, cap);
    }
    Ok(u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn norm_examples() {
        assert_relative_eq!(norm_eval(&[3.0, 4.0], &NormSpec::Euclidean).unwrap(), 5.0, epsilon = 1e-14);
        assert_relative_eq!(
            norm_eval(&[5.0, 1.0, 1.0, 1.0], &NormSpec::TopKL1 { k_top: 2 }).unwrap(),
            6.0,
            epsilon = 1e-14
        );
        let expected = (1.0 + 2f64.powf(1.5) + 3f64.powf(1.5)).powf(2.0 / 3.0);
        assert_relative_eq!(
            norm_eval(&[1.0, -2.0, 3.0], &NormSpec::PNorm { p: 1.5 }).unwrap(),
            expected,
            epsilon = 1e-12
        );
    }

    #[test]
    fn dual_norm_examples() {
        assert_relative_eq!(dual_norm_eval(&[3.0, 4.0], &NormSpec::Euclidean).unwrap(), 5.0, epsilon = 1e-14);
        assert_relative_eq!(
            dual_norm_eval(&[1.0, 1.0], &NormSpec::PNorm { p: 1.5 }).unwrap(),
            2f64.powf(1.0 / 3.0),
            epsilon = 1e-12
        );
        assert_relative_eq!(
            dual_norm_eval(&[3.0, 1.0, 1.0, 1.0], &NormSpec::TopKL1 { k_top: 2 }).unwrap(),
            3.0,
            epsilon = 1e-14
        );
    }

    #[test]
    fn topk_dual_matches_sampled_supremum() {
        // sup over x of <x, v> / ||x||; the supremum is attained at dual vertices
        // and approached by random directions, never exceeded.
        let v = [3.0, 1.0, 1.0, 1.0];
        let spec = NormSpec::TopKL1 { k_top: 2 };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut best: f64 = 0.0;
        for _ in 0..200_000 {
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let nx = norm_eval(&x, &spec).unwrap();
            let ip: f64 = x.iter().zip(&v).map(|(a, b)| a * b).sum();
            best = best.max(ip / nx);
        }
        // the primal extreme points (e_1 and sparse sign vectors) are hit by a grid as well
        for x in [[1.0, 0.0, 0.0, 0.0], [0.5, 0.5, 0.5, 0.5]] {
            let ip: f64 = x.iter().zip(&v).map(|(a, b)| a * b).sum();
            best = best.max(ip / norm_eval(&x, &spec).unwrap());
        }
        let dual = dual_norm_eval(&v, &spec).unwrap();
        assert!(best <= dual + 1e-12);
        assert_relative_eq!(best, dual, epsilon = 1e-6);
    }

    #[test]
    fn non_finite_is_rejected() {
        assert!(matches!(norm_eval(&[f64::NAN], &NormSpec::Euclidean), Err(Error::InvalidInput(_))));
        assert!(dual_norm_eval(&[f64::INFINITY], &NormSpec::Euclidean).is_err());
    }

    #[test]
    fn spec_metadata() {
        let s = NormSpec::PNorm { p: 1.5 };
        assert_relative_eq!(s.q().unwrap(), 3.0);
        assert_relative_eq!(s.gamma().unwrap(), 0.5);
        assert_eq!(NormSpec::Euclidean.gamma(), Some(1.0));
        assert_eq!(NormSpec::TopKL1 { k_top: 3 }.gamma(), None);
        let m = NormSpec::L1ViaP { m: 20 };
        assert_relative_eq!(m.p().unwrap(), 1.0 + 1.0 / 20f64.ln());
        assert!(NormSpec::pnorm(2.5).is_err());
        assert!(NormSpec::pnorm(1.0).is_err());
    }

    #[test]
    fn json_round_trip_is_text_exact() {
        for spec in [
            NormSpec::Euclidean,
            NormSpec::PNorm { p: 1.2345678901234567 },
            NormSpec::L1ViaP { m: 20 },
            NormSpec::TopKL1 { k_top: 4 },
        ] {
            let text = serde_json::to_string(&spec).unwrap();
            let back: NormSpec = serde_json::from_str(&text).unwrap();
            assert_eq!(back, spec);
            assert_eq!(serde_json::to_string(&back).unwrap(), text);
        }
        let text = serde_json::to_string(&NormSpec::PNorm { p: 1.5 }).unwrap();
        assert_eq!(text, r#"{"kind":"pnorm","p":1.5,"k_top":null,"m":null}"#);
        assert!(serde_json::from_str::<NormSpec>(r#"{"kind":"pnorm","p":3.0,"k_top":null,"m":null}"#).is_err());
    }

    #[test]
    fn support_vertex_examples() {
        let SupportSet::Vertices(v) = support_vertices(&NormSpec::L1ViaP { m: 3 }, 2, VertexMode::ExactL1, 1 << 20).unwrap()
        else {
            panic!("expected vertices")
        };
        let mut v = v;
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(v, vec![vec![-1.0, -1.0], vec![-1.0, 1.0], vec![1.0, -1.0], vec![1.0, 1.0]]);

        let SupportSet::Vertices(mut v) = support_vertices(&NormSpec::TopKL1 { k_top: 1 }, 2, VertexMode::Native, 1 << 20).unwrap()
        else {
            panic!("expected vertices")
        };
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(v, vec![vec![-1.0, 0.0], vec![0.0, -1.0], vec![0.0, 1.0], vec![1.0, 0.0]]);

        assert_eq!(
            support_vertices(&NormSpec::Euclidean, 3, VertexMode::Native, 1 << 20).unwrap(),
            SupportSet::NotPolyhedral
        );
        assert_eq!(
            support_vertices(&NormSpec::L1ViaP { m: 5 }, 3, VertexMode::Native, 1 << 20).unwrap(),
            SupportSet::NotPolyhedral
        );
        assert!(matches!(
            support_vertices(&NormSpec::L1ViaP { m: 5 }, 21, VertexMode::ExactL1, DEFAULT_VERTEX_CAP),
            Err(Error::TooManyVertices { .. })
        ));
        assert!(support_vertices(&NormSpec::L1ViaP { m: 5 }, 20, VertexMode::ExactL1, DEFAULT_VERTEX_CAP).is_ok());
    }

    #[test]
    fn support_vertices_realize_the_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (spec, mode) in [
            (NormSpec::L1ViaP { m: 4 }, VertexMode::ExactL1),
            (NormSpec::TopKL1 { k_top: 2 }, VertexMode::Native),
            (NormSpec::TopKL1 { k_top: 5 }, VertexMode::Native),
        ] {
            let SupportSet::Vertices(vs) = support_vertices(&spec, 4, mode, 1 << 20).unwrap() else {
                panic!()
            };
            for _ in 0..1000 {
                let y: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
                let best = vs
                    .iter()
                    .map(|v| v.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>())
                    .fold(f64::NEG_INFINITY, f64::max);
                assert_relative_eq!(best, norm_eval_mode(&y, &spec, mode).unwrap(), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn induced_norm_examples() {
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![3.0, 1.0]));
        let r = induced_two_to_psi(&a, &NormSpec::Euclidean, VertexMode::Native, 0, 0).unwrap();
        assert_eq!(r.method, CertMethod::Exact);
        assert_relative_eq!(r.lower, 3.0, epsilon = 1e-12);
        assert_relative_eq!(r.upper, 3.0, epsilon = 1e-12);

        let r = induced_two_to_psi(&DMatrix::identity(2, 2), &NormSpec::L1ViaP { m: 3 }, VertexMode::ExactL1, 0, 0)
            .unwrap();
        assert_relative_eq!(r.lower, 2f64.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(r.upper, 2f64.sqrt(), epsilon = 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
        let r = induced_two_to_psi(&a, &NormSpec::PNorm { p: 1.5 }, VertexMode::Native, 10_000, 5).unwrap();
        assert!(r.lower > 0.0 && r.lower <= r.upper);
        assert!(r.upper / r.lower <= std::f64::consts::FRAC_PI_2, "{r:?}");

        assert!(matches!(
            induced_two_to_psi(&a, &NormSpec::PNorm { p: 1.5 }, VertexMode::Native, 0, 5),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn capped_simplex_examples() {
        assert_eq!(capped_simplex_project(&[1.0, 0.0, 0.0], 1.0).unwrap(), vec![1.0, 0.0, 0.0]);
        let u = vec![0.25; 4];
        let p = capped_simplex_project(&u, 0.3).unwrap();
        for (a, b) in p.iter().zip(&u) {
            assert_relative_eq!(a, b, epsilon = 1e-15);
        }
        let p = capped_simplex_project(&[0.6, 0.6, 0.0], 0.5).unwrap();
        assert_relative_eq!(p[0], 0.5, epsilon = 1e-12);
        assert_relative_eq!(p[1], 0.5, epsilon = 1e-12);
        assert_relative_eq!(p[2], 0.0, epsilon = 1e-12);
        assert!(matches!(capped_simplex_project(&[0.1, 0.2], 0.4), Err(Error::InfeasibleCap { .. })));
    }

    #[test]
    fn capped_simplex_matches_grid_search() {
        // Dense QP grid over the feasible triangle slice for n = 3.
        let w = [0.6, 0.6, 0.0];
        let cap = 0.5;
        let steps = 400;
        let mut best = (f64::INFINITY, [0.0; 3]);
        for i in 0..=steps {
            for j in 0..=steps {
                let a = cap * i as f64 / steps as f64;
                let b = cap * j as f64 / steps as f64;
                let c = 1.0 - a - b;
                if !(0.0..=cap).contains(&c) {
                    continue;
                }
                let dist = (a - w[0]).powi(2) + (b - w[1]).powi(2) + (c - w[2]).powi(2);
                if dist < best.0 {
                    best = (dist, [a, b, c]);
                }
            }
        }
        let p = capped_simplex_project(&w, cap).unwrap();
        for k in 0..3 {
            assert!((p[k] - best.1[k]).abs() < 2e-3);
        }
    }

    fn spec_strategy() -> impl Strategy<Value = NormSpec> {
        prop_oneof![
            Just(NormSpec::Euclidean),
            (1.05f64..=2.0).prop_map(|p| NormSpec::PNorm { p }),
            (3usize..50).prop_map(|m| NormSpec::L1ViaP { m }),
            (1usize..6).prop_map(|k_top| NormSpec::TopKL1 { k_top }),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn holder_inequality_with_tight_witness(
            spec in spec_strategy(),
            v in prop::collection::vec(-5.0f64..5.0, 5),
            w in prop::collection::vec(-5.0f64..5.0, 5),
        ) {
            let r = spec.resolve(VertexMode::Native);
            let ip: f64 = v.iter().zip(&w).map(|(a, b)| a * b).sum();
            prop_assert!(ip <= r.eval(&v) * r.dual(&w) + 1e-9);
            // the dual argmax attains ||w|| = <w, x> with ||x||_* <= 1
            let x = r.dual_argmax(&w);
            let attained: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum();
            prop_assert!((attained - r.eval(&w)).abs() <= 1e-6 * (1.0 + r.eval(&w)));
            prop_assert!(r.dual(&x) <= 1.0 + 1e-9);
        }

        #[test]
        fn dual_norm_is_strongly_smooth(
            p in 1.1f64..=2.0,
            v in prop::collection::vec(-3.0f64..3.0, 6),
            w in prop::collection::vec(-3.0f64..3.0, 6),
        ) {
            let r = NormSpec::PNorm { p }.resolve(VertexMode::Native);
            let gamma = p - 1.0;
            let plus: Vec<f64> = v.iter().zip(&w).map(|(a, b)| a + b).collect();
            let minus: Vec<f64> = v.iter().zip(&w).map(|(a, b)| a - b).collect();
            let lhs = 0.5 * (r.dual(&plus).powi(2) + r.dual(&minus).powi(2));
            let rhs = r.dual(&v).powi(2) + r.dual(&w).powi(2) / gamma;
            prop_assert!(lhs <= rhs + 1e-9);
        }

        #[test]
        fn norm_is_absolutely_homogeneous(
            spec in spec_strategy(),
            v in prop::collection::vec(-5.0f64..5.0, 4),
            t in -4.0f64..4.0,
        ) {
            let n = norm_eval(&v, &spec).unwrap();
            let scaled: Vec<f64> = v.iter().map(|x| t * x).collect();
            prop_assert!((norm_eval(&scaled, &spec).unwrap() - t.abs() * n).abs() <= 1e-9 * (1.0 + n));
            prop_assert!(n >= 0.0);
        }

        #[test]
        fn capped_simplex_is_idempotent_and_feasible(
            w in prop::collection::vec(-2.0f64..2.0, 2..12),
            slack in 1.0f64..3.0,
        ) {
            let cap = slack / w.len() as f64;
            let u = capped_simplex_project(&w, cap).unwrap();
            let s: f64 = u.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!(u.iter().all(|&x| x >= 0.0 && x <= cap + 1e-15));
            let again = capped_simplex_project(&u, cap).unwrap();
            for (a, b) in u.iter().zip(&again) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
