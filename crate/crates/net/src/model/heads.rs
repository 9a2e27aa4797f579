//! Bin head (query embeddings to per-domain bin centers), domain head, and
//! the fusion of per-domain centers.

use candle_core::{Tensor, D};

use crate::config::{BinMode, Fusion, HeadVariant};
use crate::error::Result;
use crate::ops::{softmax, Linear, Mlp};
use crate::params::{Init, ParamStore};
use depthbins::bins::BIN_EPSILON;

pub struct BinHead {
    variant: HeadVariant,
    mode: BinMode,
    ffns: Vec<Mlp>,
    bank_size: usize,
    /// `(K, 1)` lower and upper depth of each domain, width mode only.
    lo: Tensor,
    hi: Tensor,
}

pub struct BinHeadSpec {
    pub variant: HeadVariant,
    pub mode: BinMode,
    pub dim: usize,
    pub n_bins: usize,
    pub bank_size: usize,
    /// Interval each domain's width bins cover.
    pub intervals: Vec<(f64, f64)>,
}

impl BinHead {
    /// Bin queries the PST must provide for `variant`.
    pub fn n_queries(variant: HeadVariant, bank_size: usize) -> usize {
        match variant {
            HeadVariant::OneQueryKFfn => 1,
            _ => bank_size,
        }
    }

    pub fn new(ps: &mut ParamStore, spec: &BinHeadSpec) -> Result<Self> {
        let n_ffn = match spec.variant {
            HeadVariant::SharedFfn => 1,
            _ => spec.bank_size,
        };
        let (z_lo, z_hi) = spec.intervals.iter().fold((f64::MAX, f64::MIN), |(a, b), (l, h)| (a.min(*l), b.max(*h)));
        let out_bias = match spec.mode {
            // initial centers ramp evenly over the lower half of the range
            BinMode::Variation => Init::Const((z_hi - z_lo) / (2.0 * spec.n_bins as f64)),
            BinMode::Width => Init::Zeros,
        };
        let ffns = (0..n_ffn)
            .map(|i| Mlp::new(ps, &format!("bin_head.ffn{i}"), spec.dim, spec.dim, spec.n_bins, out_bias))
            .collect::<Result<Vec<_>>>()?;
        let dev = ps.device().clone();
        let col = |f: fn(&(f64, f64)) -> f64| -> Result<Tensor> {
            let v: Vec<f64> = spec.intervals.iter().map(f).collect();
            Ok(Tensor::from_vec(v, (spec.intervals.len(), 1), &dev)?.to_dtype(ps.dtype())?)
        };
        Ok(Self {
            variant: spec.variant,
            mode: spec.mode,
            ffns,
            bank_size: spec.bank_size,
            lo: col(|i| i.0)?,
            hi: col(|i| i.1)?,
        })
    }

    /// Raw head outputs `(B, K, N)`: variations, or unnormalized widths
    /// before the ReLU.
    pub fn raw(&self, bin_queries: &Tensor) -> Result<Tensor> {
        match self.variant {
            HeadVariant::SharedFfn => self.ffns[0].forward(bin_queries),
            HeadVariant::KQueryKFfn => {
                let parts = (0..self.bank_size)
                    .map(|k| self.ffns[k].forward(&bin_queries.narrow(1, k, 1)?))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Tensor::cat(&parts, 1)?)
            }
            HeadVariant::OneQueryKFfn => {
                let q = bin_queries.narrow(1, 0, 1)?;
                let parts = self.ffns.iter().map(|f| f.forward(&q)).collect::<Result<Vec<_>>>()?;
                Ok(Tensor::cat(&parts, 1)?)
            }
        }
    }

    /// Per-domain centers `(B, K, N)` from raw outputs.
    pub fn centers(&self, raw: &Tensor) -> Result<Tensor> {
        match self.mode {
            BinMode::Variation => Ok(((raw.cumsum(D::Minus1)? - (raw * 0.5)?)? + BIN_EPSILON)?),
            BinMode::Width => {
                let w = (raw.relu()? + BIN_EPSILON)?;
                let b = w.broadcast_div(&w.sum_keepdim(D::Minus1)?)?;
                let pos = (b.cumsum(D::Minus1)? - (&b * 0.5)?)?;
                let span = (&self.hi - &self.lo)?;
                Ok(pos.broadcast_mul(&span)?.broadcast_add(&self.lo)?)
            }
        }
    }
}

pub struct DomainHead {
    linear: Linear,
}

impl DomainHead {
    pub fn new(ps: &mut ParamStore, dim: usize, k: usize) -> Result<Self> {
        Ok(Self {
            linear: Linear::new(ps, "domain_head", dim, k)?,
        })
    }

    /// `(B, D) -> (B, K)` logits.
    pub fn logits(&self, domain_query: &Tensor) -> Result<Tensor> {
        self.linear.forward(domain_query)
    }
}

/// Fused centers `(B, N)` from the bank `(B, K_b, N)` and domain
/// probabilities `(B, K)`.
pub fn fuse(bank: &Tensor, y: &Tensor, fusion: Fusion, domain_aware: bool) -> Result<Tensor> {
    if !domain_aware {
        return Ok(bank.squeeze(1)?);
    }
    let weights = match fusion {
        Fusion::Weighted => y.clone(),
        Fusion::Hard => {
            let k = y.dim(1)?;
            let idx = y.argmax_keepdim(1)?;
            let range = Tensor::arange(0u32, k as u32, y.device())?.unsqueeze(0)?;
            range.broadcast_eq(&idx)?.to_dtype(y.dtype())?
        }
    };
    Ok(bank.broadcast_mul(&weights.unsqueeze(2)?)?.sum(1)?)
}

/// Domain probabilities from logits.
pub fn domain_probs(logits: &Tensor) -> Result<Tensor> {
    softmax(logits, 1)
}
