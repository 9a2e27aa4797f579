//! Decoder with hierarchical scale constraints.
//!
//! Stage 1 turns the bottleneck context into an N-channel logit map; every
//! later stage doubles the resolution, merges the encoder feature of that
//! scale with the upsampled previous depth map through a residual
//! convolution block, and again produces N logits. Each stage converts its
//! per-pixel softmax into metric depth with the same fused centers.

use candle_core::Tensor;

use crate::error::Result;
use crate::ops::{combine, resize_bilinear, softmax, Conv};
use crate::params::ParamStore;

struct Stage {
    lateral: Conv,
    up: Conv,
    merge: Conv,
    res1: Conv,
    res2: Conv,
    compress: Conv,
}

pub struct Decoder {
    stem: Conv,
    compress1: Option<Conv>,
    stages: Vec<Stage>,
    hsc: bool,
    z_max: f64,
}

pub struct DecoderSpec {
    /// Encoder channels coarse to fine, `C_1..C_5`.
    pub encoder_channels: [usize; 5],
    pub channels: usize,
    pub n_bins: usize,
    pub hsc: bool,
    pub z_max: f64,
}

/// Per-stage outputs, coarse to fine. Without hierarchical constraints
/// only the last stage is present.
#[derive(Clone, Debug)]
pub struct DecoderOutput {
    pub depths: Vec<Tensor>,
    pub probs: Vec<Tensor>,
}

impl Decoder {
    pub fn new(ps: &mut ParamStore, spec: &DecoderSpec) -> Result<Self> {
        let c = spec.channels;
        let stem = Conv::new(ps, "decoder.stem", spec.encoder_channels[0], c, 1)?;
        let compress1 = if spec.hsc {
            Some(Conv::new(ps, "decoder.s1.compress", c, spec.n_bins, 1)?)
        } else {
            None
        };
        let mut stages = Vec::new();
        for s in 2..=5 {
            let name = format!("decoder.s{s}");
            let with_depth = usize::from(spec.hsc);
            stages.push(Stage {
                lateral: Conv::new(ps, &format!("{name}.lateral"), spec.encoder_channels[s - 1], c, 1)?,
                up: Conv::new(ps, &format!("{name}.up"), c, c, 1)?,
                merge: Conv::new(ps, &format!("{name}.merge"), c + with_depth, c, 1)?,
                res1: Conv::new(ps, &format!("{name}.res1"), c, c, 3)?,
                res2: Conv::new_small(ps, &format!("{name}.res2"), c, c, 3)?,
                compress: Conv::new(ps, &format!("{name}.compress"), c, spec.n_bins, 1)?,
            });
        }
        Ok(Self {
            stem,
            compress1,
            stages,
            hsc: spec.hsc,
            z_max: spec.z_max,
        })
    }

    /// `features` coarse to fine (`F_1..F_5`), `context` at `F_1`
    /// resolution, `centers` `(B, N)`.
    pub fn forward(&self, features: &[Tensor], context: &Tensor, centers: &Tensor) -> Result<DecoderOutput> {
        let mut depths = Vec::new();
        let mut probs = Vec::new();
        let mut g = self.stem.forward(context)?;
        if let Some(compress) = &self.compress1 {
            let p = softmax(&compress.forward(&g.relu()?)?, 1)?;
            depths.push(combine(&p, centers)?);
            probs.push(p);
        }
        for (i, st) in self.stages.iter().enumerate() {
            let f = &features[i + 1];
            let (_, _, h, w) = f.dims4()?;
            let up = st.up.forward(&resize_bilinear(&g, h, w)?)?;
            let mut x = (st.lateral.forward(f)? + up)?.relu()?;
            if self.hsc {
                let prev = depths.last().expect("stage 1 depth").unsqueeze(1)?;
                let prev = (resize_bilinear(&prev, h, w)? / self.z_max)?;
                x = Tensor::cat(&[&x, &prev], 1)?;
            }
            let x = st.merge.forward(&x)?;
            let r = st.res2.forward(&st.res1.forward(&x.relu()?)?.relu()?)?;
            g = (x + r)?;
            if self.hsc || i + 1 == self.stages.len() {
                let p = softmax(&st.compress.forward(&g.relu()?)?, 1)?;
                depths.push(combine(&p, centers)?);
                probs.push(p);
            }
        }
        Ok(DecoderOutput { depths, probs })
    }
}
