//! Bottleneck transformer over the deepest feature map.
//!
//! One pre-norm encoder per patch size runs over a patchified copy of
//! `F_1`. The learnable queries (bin queries plus one domain query) are
//! appended only to the token stream of the smallest-patch encoder and
//! carry no positional embedding, so permuting them permutes their outputs.
//! Encoder outputs are unpatchified and summed onto `F_1` as context.

use candle_core::Tensor;

use crate::error::Result;
use crate::ops::{softmax, LayerNorm, Linear, Mlp};
use crate::params::{Init, ParamStore};

struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    heads: usize,
}

impl Attention {
    fn new(ps: &mut ParamStore, name: &str, dim: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            q: Linear::new(ps, &format!("{name}.q"), dim, dim)?,
            k: Linear::new(ps, &format!("{name}.k"), dim, dim)?,
            v: Linear::new(ps, &format!("{name}.v"), dim, dim)?,
            o: Linear::new(ps, &format!("{name}.o"), dim, dim)?,
            heads,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, t, d) = x.dims3()?;
        let dh = d / self.heads;
        let split = |y: Tensor| -> Result<Tensor> {
            Ok(y.reshape((b, t, self.heads, dh))?.transpose(1, 2)?.contiguous()?)
        };
        let q = split(self.q.forward(x)?)?;
        let k = split(self.k.forward(x)?)?;
        let v = split(self.v.forward(x)?)?;
        let scores = (q.matmul(&k.t()?.contiguous()?)? / (dh as f64).sqrt())?;
        let att = softmax(&scores, 3)?;
        let out = att.matmul(&v)?.transpose(1, 2)?.reshape((b, t, d))?;
        self.o.forward(&out)
    }
}

struct EncoderLayer {
    ln1: LayerNorm,
    attn: Attention,
    ln2: LayerNorm,
    ffn: Mlp,
}

impl EncoderLayer {
    fn new(ps: &mut ParamStore, name: &str, dim: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            ln1: LayerNorm::new(ps, &format!("{name}.ln1"), dim)?,
            attn: Attention::new(ps, &format!("{name}.attn"), dim, heads)?,
            ln2: LayerNorm::new(ps, &format!("{name}.ln2"), dim)?,
            ffn: Mlp::new(ps, &format!("{name}.ffn"), dim, 2 * dim, dim, Init::Zeros)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let x = (x + self.attn.forward(&self.ln1.forward(x)?)?)?;
        Ok((&x + self.ffn.forward(&self.ln2.forward(&x)?)?)?)
    }
}

struct Branch {
    patch: usize,
    grid: (usize, usize),
    embed: Linear,
    pos: Tensor,
    layers: Vec<EncoderLayer>,
    norm: LayerNorm,
    unembed: Linear,
}

/// `(B, C, H, W) -> (B, gh*gw, C*p*p)`, zero-padding to whole patches.
fn patchify(x: &Tensor, p: usize, grid: (usize, usize)) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let (gh, gw) = grid;
    let x = x.pad_with_zeros(2, 0, gh * p - h)?.pad_with_zeros(3, 0, gw * p - w)?;
    Ok(x.reshape((b, c, gh, p, gw, p))?
        .permute((0, 2, 4, 1, 3, 5))?
        .reshape((b, gh * gw, c * p * p))?)
}

fn unpatchify(t: &Tensor, c: usize, p: usize, grid: (usize, usize), h: usize, w: usize) -> Result<Tensor> {
    let b = t.dim(0)?;
    let (gh, gw) = grid;
    Ok(t.reshape((b, gh, gw, c, p, p))?
        .permute((0, 3, 1, 4, 2, 5))?
        .reshape((b, c, gh * p, gw * p))?
        .narrow(2, 0, h)?
        .narrow(3, 0, w)?)
}

pub struct Pst {
    branches: Vec<Branch>,
    queries: Tensor,
    channels: usize,
    size: (usize, usize),
}

/// Query embeddings after the encoder: `(B, n_bin_queries, D)` and `(B, D)`.
#[derive(Clone, Debug)]
pub struct QueryBundle {
    pub bin_query_outputs: Tensor,
    pub domain_query_output: Tensor,
}

pub struct PstSpec {
    pub channels: usize,
    pub size: (usize, usize),
    pub patch_sizes: Vec<usize>,
    pub depth: usize,
    pub heads: usize,
    pub dim: usize,
    pub n_bin_queries: usize,
}

impl Pst {
    pub fn new(ps: &mut ParamStore, spec: &PstSpec) -> Result<Self> {
        let (h, w) = spec.size;
        let mut patches = spec.patch_sizes.clone();
        patches.sort_unstable();
        patches.dedup();
        let mut branches = Vec::new();
        for p in patches {
            let name = format!("pst.p{p}");
            let grid = (h.div_ceil(p), w.div_ceil(p));
            let patch_dim = spec.channels * p * p;
            let layers = (0..spec.depth)
                .map(|l| EncoderLayer::new(ps, &format!("{name}.layer{l}"), spec.dim, spec.heads))
                .collect::<Result<Vec<_>>>()?;
            branches.push(Branch {
                patch: p,
                grid,
                embed: Linear::new(ps, &format!("{name}.embed"), patch_dim, spec.dim)?,
                pos: ps.get(&format!("{name}.pos"), &[grid.0 * grid.1, spec.dim], Init::Normal(0.02))?,
                layers,
                norm: LayerNorm::new(ps, &format!("{name}.norm"), spec.dim)?,
                unembed: Linear::with_init(
                    ps,
                    &format!("{name}.unembed"),
                    spec.dim,
                    patch_dim,
                    Init::Fan(spec.dim * 16),
                    Init::Zeros,
                )?,
            });
        }
        let queries = ps.get("pst.queries", &[spec.n_bin_queries + 1, spec.dim], Init::Normal(0.02))?;
        Ok(Self {
            branches,
            queries,
            channels: spec.channels,
            size: spec.size,
        })
    }

    pub fn n_queries(&self) -> usize {
        self.queries.dims()[0]
    }

    pub fn forward(&self, f1: &Tensor) -> Result<(Tensor, QueryBundle)> {
        self.forward_with_queries(f1, &self.queries)
    }

    /// Same as [`Pst::forward`] with an explicit `(Q, D)` query matrix.
    pub fn forward_with_queries(&self, f1: &Tensor, queries: &Tensor) -> Result<(Tensor, QueryBundle)> {
        let b = f1.dim(0)?;
        let (h, w) = self.size;
        let mut context = f1.clone();
        let mut query_out = None;
        for (i, br) in self.branches.iter().enumerate() {
            let tokens = br.embed.forward(&patchify(f1, br.patch, br.grid)?)?.broadcast_add(&br.pos)?;
            let n_tok = tokens.dim(1)?;
            let mut x = if i == 0 {
                let (q, d) = queries.dims2()?;
                Tensor::cat(&[&tokens, &queries.unsqueeze(0)?.broadcast_as((b, q, d))?], 1)?
            } else {
                tokens
            };
            for layer in &br.layers {
                x = layer.forward(&x)?;
            }
            let x = br.norm.forward(&x)?;
            if i == 0 {
                query_out = Some(x.narrow(1, n_tok, x.dim(1)? - n_tok)?);
            }
            let back = br.unembed.forward(&x.narrow(1, 0, n_tok)?)?;
            context = (context + unpatchify(&back, self.channels, br.patch, br.grid, h, w)?)?;
        }
        let q = query_out.expect("at least one branch");
        let nq = q.dim(1)?;
        Ok((
            context,
            QueryBundle {
                bin_query_outputs: q.narrow(1, 0, nq - 1)?,
                domain_query_output: q.narrow(1, nq - 1, 1)?.squeeze(1)?,
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device, D};

    #[test]
    fn patchify_round_trips_with_padding() {
        let x = Tensor::arange(0f32, 2.0 * 3.0 * 5.0, &Device::Cpu).unwrap().reshape((1, 2, 3, 5)).unwrap();
        let grid = (2, 3);
        let t = patchify(&x, 2, grid).unwrap();
        assert_eq!(t.dims(), &[1, 6, 8]);
        let back = unpatchify(&t, 2, 2, grid, 3, 5).unwrap();
        let d = (back - &x).unwrap().abs().unwrap().sum_all().unwrap().to_scalar::<f32>().unwrap();
        assert_eq!(d, 0.0);
    }

    #[test]
    fn query_permutation_is_equivariant() {
        let mut ps = ParamStore::new(0, DType::F64, Device::Cpu);
        let spec = PstSpec {
            channels: 6,
            size: (2, 3),
            patch_sizes: vec![1, 2],
            depth: 2,
            heads: 2,
            dim: 8,
            n_bin_queries: 3,
        };
        let pst = Pst::new(&mut ps, &spec).unwrap();
        let f1 = Tensor::randn(0f64, 1.0, (2, 6, 2, 3), &Device::Cpu).unwrap();
        let q = pst.queries.clone();
        let perm = Tensor::new(&[2u32, 0, 1, 3], &Device::Cpu).unwrap();
        let (c0, a) = pst.forward_with_queries(&f1, &q).unwrap();
        let (c1, b) = pst.forward_with_queries(&f1, &q.index_select(&perm, 0).unwrap()).unwrap();
        let want = a.bin_query_outputs.contiguous().unwrap().index_select(&perm.narrow(0, 0, 3).unwrap(), 1).unwrap();
        let diff = |x: &Tensor, y: &Tensor| (x - y).unwrap().abs().unwrap().max_keepdim(D::Minus1).unwrap().flatten_all().unwrap().max(0).unwrap().to_scalar::<f64>().unwrap();
        assert!(diff(&want, &b.bin_query_outputs) < 1e-12);
        assert!(diff(&a.domain_query_output, &b.domain_query_output) < 1e-12);
        assert!(diff(&c0, &c1) < 1e-12);
        assert_eq!(pst.n_queries(), 4);
    }
}
