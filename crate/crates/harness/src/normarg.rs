//! `--norm` values: `l2`, `lp:<p>`, `l1`, `topk:<k>`.

use resil_core::norms::{NormSpec, VertexMode};
use resil_core::{Error, Result};

/// A parsed norm flag. `l1` needs the dimension before it becomes a spec.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormArg {
    L2,
    Lp(f64),
    L1,
    TopK(usize),
}

impl NormArg {
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || Error::InvalidConfig(format!("bad norm {s:?}; expected l2, lp:<p>, l1 or topk:<k>"));
        let arg = match s.split_once(':') {
            None if s == "l2" => NormArg::L2,
            None if s == "l1" => NormArg::L1,
            Some(("lp", p)) => NormArg::Lp(p.parse().map_err(|_| bad())?),
            Some(("topk", k)) => NormArg::TopK(k.parse().map_err(|_| bad())?),
            _ => return Err(bad()),
        };
        // validate eagerly so bad flags fail before any data is read
        arg.spec(3)?;
        Ok(arg)
    }

    /// Spec and vertex mode for dimension `d`. Exact l1 rides on the l_p surrogate with exact vertices.
    pub fn spec(&self, d: usize) -> Result<(NormSpec, VertexMode)> {
        let (spec, mode) = match *self {
            NormArg::L2 => (NormSpec::Euclidean, VertexMode::Native),
            NormArg::Lp(p) => (NormSpec::PNorm { p }, VertexMode::Native),
            NormArg::L1 => (NormSpec::L1ViaP { m: d.max(3) }, VertexMode::ExactL1),
            NormArg::TopK(k) => (NormSpec::TopKL1 { k_top: k }, VertexMode::Native),
        };
        spec.validate()?;
        Ok((spec, mode))
    }
}
