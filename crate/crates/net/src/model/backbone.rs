//! Five-stage convolutional encoder. Each stage halves the resolution with
//! a space-to-depth step and a 1x1 patch-merge convolution, then applies a
//! residual 3x3 convolution. Channels double per stage.

use candle_core::Tensor;

use crate::error::Result;
use crate::ops::{space_to_depth, Conv};
use crate::params::ParamStore;

pub struct Backbone {
    stages: Vec<(Conv, Conv)>,
}

/// Encoder features ordered coarse to fine: `features[0]` is `F_1` at
/// `h/32`, `features[4]` is `F_5` at `h/2`.
#[derive(Clone, Debug)]
pub struct FeaturePyramid {
    pub features: Vec<Tensor>,
}

impl FeaturePyramid {
    /// `F_s`, 1-based.
    pub fn stage(&self, s: usize) -> &Tensor {
        &self.features[s - 1]
    }
}

pub fn stage_channels(base: usize) -> [usize; 5] {
    // fine to coarse
    [base, base * 2, base * 4, base * 8, base * 16]
}

impl Backbone {
    pub fn new(ps: &mut ParamStore, base: usize) -> Result<Self> {
        let mut c_in = 3;
        let mut stages = Vec::new();
        for (i, c) in stage_channels(base).into_iter().enumerate() {
            let merge = Conv::new(ps, &format!("backbone.{i}.merge"), 4 * c_in, c, 1)?;
            let conv = Conv::new_small(ps, &format!("backbone.{i}.conv"), c, c, 3)?;
            stages.push((merge, conv));
            c_in = c;
        }
        Ok(Self { stages })
    }

    /// `image` is `(B, 3, H, W)` already normalized.
    pub fn forward(&self, image: &Tensor) -> Result<FeaturePyramid> {
        let mut x = image.clone();
        let mut fine_to_coarse = Vec::with_capacity(5);
        for (merge, conv) in &self.stages {
            x = merge.forward(&space_to_depth(&x)?)?.relu()?;
            x = (&x + conv.forward(&x)?)?.relu()?;
            fine_to_coarse.push(x.clone());
        }
        fine_to_coarse.reverse();
        Ok(FeaturePyramid {
            features: fine_to_coarse,
        })
    }
}
