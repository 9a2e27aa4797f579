//! Tensor helpers and small layers.
//!
//! Everything here is built from primitives whose gradients are exact on
//! the CPU backend for any spatial size: downsampling is a space-to-depth
//! reshape, resizing is a pair of interpolation-matrix products, and the
//! softmax is composed by hand (the fused kernel has no backward pass).

use candle_core::{DType, Device, Tensor, D};
use depthbins::maps::bilinear_taps;

use crate::error::Result;
use crate::params::{Init, ParamStore};

/// Numerically stable softmax along `dim`.
pub fn softmax(x: &Tensor, dim: usize) -> Result<Tensor> {
    let max = x.max_keepdim(dim)?.detach();
    let e = x.broadcast_sub(&max)?.exp()?;
    Ok(e.broadcast_div(&e.sum_keepdim(dim)?)?)
}

pub fn log_softmax(x: &Tensor, dim: usize) -> Result<Tensor> {
    let max = x.max_keepdim(dim)?.detach();
    let shifted = x.broadcast_sub(&max)?;
    let lse = shifted.exp()?.sum_keepdim(dim)?.log()?;
    Ok(shifted.broadcast_sub(&lse)?)
}

/// `(B, C, H, W) -> (B, 4C, H/2, W/2)`; an odd trailing row or column is
/// dropped, so sizes follow `floor(H / 2)`.
pub fn space_to_depth(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let (h2, w2) = (h / 2, w / 2);
    let x = x.narrow(2, 0, h2 * 2)?.narrow(3, 0, w2 * 2)?;
    Ok(x
        .reshape((b, c, h2, 2, w2, 2))?
        .permute((0, 1, 3, 5, 2, 4))?
        .reshape((b, c * 4, h2, w2))?)
}

/// `(dst, src)` bilinear interpolation matrix, half-pixel centers.
pub fn interp_matrix(src: usize, dst: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let mut m = vec![0f32; dst * src];
    for (i, (lo, hi, f)) in bilinear_taps(src, dst).into_iter().enumerate() {
        m[i * src + lo] += 1.0 - f;
        m[i * src + hi] += f;
    }
    Ok(Tensor::from_vec(m, (dst, src), device)?.to_dtype(dtype)?)
}

/// Bilinear resize of the two trailing dimensions.
pub fn resize_bilinear(x: &Tensor, oh: usize, ow: usize) -> Result<Tensor> {
    let dims = x.dims();
    let (h, w) = (dims[dims.len() - 2], dims[dims.len() - 1]);
    if (h, w) == (oh, ow) {
        return Ok(x.clone());
    }
    let mh = interp_matrix(h, oh, x.dtype(), x.device())?;
    let mw_t = interp_matrix(w, ow, x.dtype(), x.device())?.t()?;
    let y = x.broadcast_matmul(&mw_t)?;
    Ok(mh.broadcast_matmul(&y)?)
}

/// Reverses the last dimension.
pub fn hflip(x: &Tensor) -> Result<Tensor> {
    let w = x.dim(D::Minus1)?;
    let idx: Vec<u32> = (0..w as u32).rev().collect();
    let idx = Tensor::from_vec(idx, w, x.device())?;
    Ok(x.index_select(&idx, x.rank() - 1)?)
}

/// `Σ_n c_n P_n` for probabilities `(B, N, H, W)` and centers `(B, N)`.
pub fn combine(probs: &Tensor, centers: &Tensor) -> Result<Tensor> {
    let (b, n) = centers.dims2()?;
    Ok(probs.broadcast_mul(&centers.reshape((b, n, 1, 1))?)?.sum(1)?)
}

#[derive(Clone, Debug)]
pub struct Linear {
    w: Tensor,
    b: Tensor,
}

impl Linear {
    pub fn new(ps: &mut ParamStore, name: &str, d_in: usize, d_out: usize) -> Result<Self> {
        Self::with_init(ps, name, d_in, d_out, Init::Fan(d_in), Init::Zeros)
    }

    pub fn with_init(ps: &mut ParamStore, name: &str, d_in: usize, d_out: usize, w: Init, b: Init) -> Result<Self> {
        Ok(Self {
            w: ps.get(&format!("{name}.weight"), &[d_out, d_in], w)?,
            b: ps.get(&format!("{name}.bias"), &[d_out], b)?,
        })
    }

    /// Applies to the last dimension of any-rank input.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.broadcast_matmul(&self.w.t()?)?.broadcast_add(&self.b)?)
    }
}

#[derive(Clone, Debug)]
pub struct Conv {
    w: Tensor,
    b: Tensor,
    pad: usize,
}

impl Conv {
    pub fn new(ps: &mut ParamStore, name: &str, c_in: usize, c_out: usize, k: usize) -> Result<Self> {
        let fan_in = c_in * k * k;
        Ok(Self {
            w: ps.get(&format!("{name}.weight"), &[c_out, c_in, k, k], Init::He(fan_in))?,
            b: ps.get(&format!("{name}.bias"), &[c_out], Init::Zeros)?,
            pad: k / 2,
        })
    }

    /// Same as [`Conv::new`] with a scaled-down uniform init, for the last
    /// layer of a residual branch.
    pub fn new_small(ps: &mut ParamStore, name: &str, c_in: usize, c_out: usize, k: usize) -> Result<Self> {
        let fan_in = c_in * k * k;
        Ok(Self {
            w: ps.get(&format!("{name}.weight"), &[c_out, c_in, k, k], Init::Fan(fan_in * 4))?,
            b: ps.get(&format!("{name}.bias"), &[c_out], Init::Zeros)?,
            pad: k / 2,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv2d(&self.w, self.pad, 1, 1, 1)?;
        let c = self.b.dim(0)?;
        Ok(y.broadcast_add(&self.b.reshape((1, c, 1, 1))?)?)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    gamma: Tensor,
    beta: Tensor,
}

impl LayerNorm {
    pub fn new(ps: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: ps.get(&format!("{name}.weight"), &[dim], Init::Const(1.0))?,
            beta: ps.get(&format!("{name}.bias"), &[dim], Init::Zeros)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let last = x.rank() - 1;
        let mean = x.mean_keepdim(last)?;
        let xc = x.broadcast_sub(&mean)?;
        let var = xc.sqr()?.mean_keepdim(last)?;
        let y = xc.broadcast_div(&(var + 1e-5)?.sqrt()?)?;
        Ok(y.broadcast_mul(&self.gamma)?.broadcast_add(&self.beta)?)
    }
}

/// Two-layer perceptron `Linear -> ReLU -> Linear`.
#[derive(Clone, Debug)]
pub struct Mlp {
    l1: Linear,
    l2: Linear,
}

impl Mlp {
    pub fn new(ps: &mut ParamStore, name: &str, d_in: usize, hidden: usize, d_out: usize, out_bias: Init) -> Result<Self> {
        Ok(Self {
            l1: Linear::with_init(ps, &format!("{name}.fc1"), d_in, hidden, Init::He(d_in), Init::Zeros)?,
            l2: Linear::with_init(ps, &format!("{name}.fc2"), hidden, d_out, Init::Fan(hidden * 16), out_bias)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.l2.forward(&self.l1.forward(x)?.relu()?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resize_matches_host_bilinear() {
        use depthbins::maps::RgbImage;
        let (h, w) = (5, 7);
        let data: Vec<f32> = (0..h * w * 3).map(|v| ((v * 37) % 101) as f32).collect();
        let img = RgbImage::new(w, h, data.clone()).unwrap();
        let host = img.resize_bilinear(4, 3);
        let t = Tensor::from_vec(data, (h, w, 3), &Device::Cpu).unwrap().permute((2, 0, 1)).unwrap();
        let r = resize_bilinear(&t, 3, 4).unwrap().permute((1, 2, 0)).unwrap();
        let r = r.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        for (a, b) in r.iter().zip(&host.data) {
            assert!((a - b).abs() < 1e-3, "{a} vs {b}");
        }
    }

    #[test]
    fn space_to_depth_floors_odd_sizes() {
        let x = Tensor::arange(0f32, 2.0 * 5.0 * 7.0, &Device::Cpu).unwrap().reshape((1, 2, 5, 7)).unwrap();
        let y = space_to_depth(&x).unwrap();
        assert_eq!(y.dims(), &[1, 8, 2, 3]);
        // channel 0 of the output is the top-left pixel of each 2x2 block
        let v = y.narrow(1, 0, 1).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(v, vec![0.0, 2.0, 4.0, 14.0, 16.0, 18.0]);
    }

    #[test]
    fn softmax_sums_to_one_and_log_agrees() {
        let x = Tensor::new(&[[1f32, 2.0, 300.0], [0.0, 0.0, 0.0]], &Device::Cpu).unwrap();
        let s = softmax(&x, 1).unwrap();
        let sums = s.sum(1).unwrap().to_vec1::<f32>().unwrap();
        assert!(sums.iter().all(|v| (v - 1.0).abs() < 1e-6));
        let l = log_softmax(&x, 1).unwrap().exp().unwrap();
        let d = (l - s).unwrap().abs().unwrap().max_keepdim(1).unwrap().max_keepdim(0).unwrap();
        assert!(d.flatten_all().unwrap().to_vec1::<f32>().unwrap()[0] < 1e-6);
    }

    #[test]
    fn hflip_reverses_columns() {
        let x = Tensor::new(&[[1f32, 2.0, 3.0]], &Device::Cpu).unwrap();
        assert_eq!(hflip(&x).unwrap().to_vec2::<f32>().unwrap(), vec![vec![3.0, 2.0, 1.0]]);
    }
}
