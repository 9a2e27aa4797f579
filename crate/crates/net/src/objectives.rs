//! Training losses.
//!
//! Pixel supervision is a scale-invariant log loss applied to every decoder
//! stage; the fused centers are pulled toward the ground-truth depth set by
//! the bi-directional Chamfer loss; the domain query is supervised by
//! cross-entropy on the range-domain label.
//!
//! Every term has a host reference on [`DepthMap`]s and a batched tensor
//! form used for training. The Chamfer term is computed on the host (it is
//! a nearest-neighbour search) and enters the graph as a linear surrogate
//! whose value is the loss and whose gradient is the exact Chamfer
//! gradient.

use candle_core::{DType, Tensor};
use depthbins::bins::{chamfer_parts, subsample_depths, ChamferParts};
use depthbins::maps::DepthMap;
use depthbins::metrics::PRED_FLOOR;
use serde::{Deserialize, Serialize};

use crate::config::{ChamferReduction, RunConfig};
use crate::error::{config, NetError, Result};
use crate::model::{ForwardOutput, PredictionBundle};
use crate::ops::log_softmax;

/// Stage weights, coarse to fine.
pub const STAGE_WEIGHTS: [f64; 5] = [1.0 / 16.0, 1.0 / 8.0, 1.0 / 4.0, 1.0 / 2.0, 1.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// `(λ_pixel, λ_chamfer, λ_ce)`
    pub weights: (f64, f64, f64),
    pub silog_alpha: f64,
    pub silog_lambda: f64,
    pub chamfer_reduction: ChamferReduction,
    pub chamfer_cap: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self::from_run(&RunConfig::default())
    }
}

impl LossConfig {
    pub fn from_run(cfg: &RunConfig) -> Self {
        Self {
            weights: (cfg.lambda_pixel, cfg.lambda_chamfer, cfg.lambda_ce),
            silog_alpha: cfg.silog_alpha,
            silog_lambda: cfg.silog_lambda,
            chamfer_reduction: cfg.chamfer_reduction,
            chamfer_cap: cfg.chamfer_cap,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub pixel: f64,
    pub chamfer: f64,
    pub domain_ce: f64,
    pub total: f64,
    pub weights: (f64, f64, f64),
}

impl LossBreakdown {
    pub fn new(pixel: f64, chamfer: f64, domain_ce: f64, weights: (f64, f64, f64)) -> Self {
        Self {
            pixel,
            chamfer,
            domain_ce,
            total: weights.0 * pixel + weights.1 * chamfer + weights.2 * domain_ce,
            weights,
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.pixel, self.chamfer, self.domain_ce, self.total].iter().all(|v| v.is_finite())
    }
}

/// Stage weights for `n` stages ending at the finest one.
pub fn stage_weights(n: usize) -> &'static [f64] {
    &STAGE_WEIGHTS[5 - n.min(5)..]
}

/// Scale-invariant log loss over jointly valid pixels.
pub fn pixel_depth_loss(pred: &DepthMap, gt: &DepthMap, alpha: f64, lambda: f64) -> Result<f64> {
    if pred.dims() != gt.dims() {
        return Err(config(format!("pixel loss on {:?} vs {:?}", pred.dims(), gt.dims())));
    }
    let (mut s, mut s2, mut n) = (0.0, 0.0, 0usize);
    for i in 0..gt.depth.len() {
        if gt.valid[i] && pred.valid[i] {
            let g = (pred.depth[i] as f64).max(PRED_FLOOR).ln() - (gt.depth[i] as f64).ln();
            s += g;
            s2 += g * g;
            n += 1;
        }
    }
    if n == 0 {
        return Err(NetError::Data(depthbins::Error::NoValidPixels("pixel depth loss")));
    }
    let (m, m2) = (s / n as f64, s2 / n as f64);
    Ok(alpha * (m2 - lambda * m * m).max(0.0).sqrt())
}

/// Weighted pixel loss over the decoder stages, the ground truth
/// nearest-downsampled to each stage.
pub fn hierarchical_loss(stages: &[DepthMap], gt: &DepthMap, weights: &[f64], alpha: f64, lambda: f64) -> Result<f64> {
    if stages.len() != weights.len() {
        return Err(config(format!("{} stages but {} weights", stages.len(), weights.len())));
    }
    let mut total = 0.0;
    for (d, w) in stages.iter().zip(weights) {
        let g = gt.resize_nearest(d.width, d.height);
        total += w * pixel_depth_loss(d, &g, alpha, lambda)?;
    }
    Ok(total)
}

/// `-ln softmax(logits)[label]`, label 1-based.
pub fn rd_classification_loss(logits: &[f64], label: usize) -> Result<f64> {
    if label == 0 || label > logits.len() {
        return Err(config(format!("label {label} outside 1..={}", logits.len())));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    Ok(lse - logits[label - 1])
}

/// Chamfer value and center gradient under the configured reduction.
pub fn chamfer_term(centers: &[f64], depths: &[f64], reduction: ChamferReduction) -> Result<(f64, Vec<f64>)> {
    let ChamferParts {
        depth_term,
        center_term,
        grad_depth_term,
        grad_center_term,
    } = chamfer_parts(centers, depths)?;
    let (a, b) = match reduction {
        ChamferReduction::Sum => (1.0, 1.0),
        ChamferReduction::Mean => (1.0 / depths.len() as f64, 1.0 / centers.len() as f64),
    };
    let grad = grad_depth_term.iter().zip(&grad_center_term).map(|(g, h)| a * g + b * h).collect();
    Ok((a * depth_term + b * center_term, grad))
}

/// Host-side total loss for one prediction. `chamfer_seed` drives the
/// subsampling of ground-truth depths.
pub fn total_loss(
    bundle: &PredictionBundle,
    gt: &DepthMap,
    label: usize,
    cfg: &LossConfig,
    chamfer_seed: u64,
) -> Result<LossBreakdown> {
    let weights = stage_weights(bundle.stage_depths.len());
    let pixel = hierarchical_loss(&bundle.stage_depths, gt, weights, cfg.silog_alpha, cfg.silog_lambda)?;
    let depths = subsample_depths(&gt.valid_depths(), cfg.chamfer_cap, chamfer_seed);
    let (chamfer, _) = chamfer_term(&bundle.fused_centers.centers, &depths, cfg.chamfer_reduction)?;
    let ce = rd_classification_loss(&bundle.domain_logits, label)?;
    Ok(LossBreakdown::new(pixel, chamfer, ce, cfg.weights))
}

/// Per-stage target: depth and validity, both `(B, h, w)`.
#[derive(Clone, Debug)]
pub struct StageTarget {
    pub depth: Tensor,
    pub mask: Tensor,
}

impl StageTarget {
    /// Stacks maps of one resolution; invalid depths become 1 so the log
    /// stays finite under the mask.
    pub fn from_maps(maps: &[DepthMap], dtype: DType) -> Result<Self> {
        let (w, h) = maps[0].dims();
        let mut depth = Vec::with_capacity(maps.len() * w * h);
        let mut mask = Vec::with_capacity(maps.len() * w * h);
        for m in maps {
            if m.dims() != (w, h) {
                return Err(config("stage targets must share one resolution"));
            }
            for (d, v) in m.depth.iter().zip(&m.valid) {
                depth.push(if *v { *d } else { 1.0 });
                mask.push(if *v { 1f32 } else { 0.0 });
            }
        }
        let dev = &candle_core::Device::Cpu;
        Ok(Self {
            depth: Tensor::from_vec(depth, (maps.len(), h, w), dev)?.to_dtype(dtype)?,
            mask: Tensor::from_vec(mask, (maps.len(), h, w), dev)?.to_dtype(dtype)?,
        })
    }
}

/// Supervision for one batch.
#[derive(Clone, Debug)]
pub struct Targets {
    /// One target per decoder output, coarse to fine.
    pub stages: Vec<StageTarget>,
    /// 1-based range-domain labels.
    pub labels: Vec<usize>,
    /// Valid ground-truth depths per sample, already subsampled.
    pub chamfer_depths: Vec<Vec<f64>>,
}

/// Per-sample SILog `(B,)` on tensors. A sample with no valid pixel at
/// this stage contributes zero.
fn silog_tensor(pred: &Tensor, t: &StageTarget, alpha: f64, lambda: f64) -> Result<Tensor> {
    let g = (pred.maximum(PRED_FLOOR)?.log()? - t.depth.log()?)?.mul(&t.mask)?;
    let n = t.mask.sum((1, 2))?;
    let has = n.gt(0.0)?.to_dtype(n.dtype())?;
    let n = n.maximum(1.0)?;
    let m = (g.sum((1, 2))? / &n)?;
    let m2 = (g.sqr()?.sum((1, 2))? / &n)?;
    // the floor keeps the sqrt differentiable when prediction equals truth
    let var = (m2 - (m.sqr()? * lambda)?)?.maximum(1e-12)?;
    Ok((var.sqrt()? * alpha)?.mul(&has)?)
}

/// Batched total loss: a scalar tensor to backpropagate and the host
/// breakdown of batch means.
pub fn batch_loss(out: &ForwardOutput, targets: &Targets, cfg: &LossConfig) -> Result<(Tensor, LossBreakdown)> {
    let b = targets.labels.len();
    if out.stage_depths.len() != targets.stages.len() {
        return Err(config(format!(
            "{} decoder stages but {} targets",
            out.stage_depths.len(),
            targets.stages.len()
        )));
    }
    let weights = stage_weights(out.stage_depths.len());
    let mut pixel: Option<Tensor> = None;
    for ((d, t), w) in out.stage_depths.iter().zip(&targets.stages).zip(weights) {
        let l = (silog_tensor(d, t, cfg.silog_alpha, cfg.silog_lambda)?.mean(0)? * *w)?;
        pixel = Some(match pixel {
            None => l,
            Some(p) => (p + l)?,
        });
    }
    let pixel = pixel.ok_or_else(|| config("no decoder stages"))?;

    let fused = out.fused.to_dtype(DType::F64)?.to_vec2::<f64>()?;
    let mut grads = Vec::with_capacity(b * fused[0].len());
    let mut chamfer = 0.0;
    for (c, d) in fused.iter().zip(&targets.chamfer_depths) {
        // diverged centers surface as a non-finite loss, not a data error
        let (l, g) = if c.iter().all(|v| v.is_finite()) {
            chamfer_term(c, d, cfg.chamfer_reduction)?
        } else {
            (f64::NAN, vec![0.0; c.len()])
        };
        chamfer += l / b as f64;
        grads.extend(g.into_iter().map(|v| v / b as f64));
    }
    let g = Tensor::from_vec(grads, out.fused.dims(), out.fused.device())?.to_dtype(out.fused.dtype())?;
    let lin = out.fused.mul(&g)?.sum_all()?;
    let chamfer_t = ((&lin - lin.detach())? + chamfer)?;

    let k = out.domain_logits.dim(1)?;
    if targets.labels.iter().any(|l| *l == 0 || *l > k) {
        return Err(config(format!("labels must lie in 1..={k}")));
    }
    let idx: Vec<u32> = targets.labels.iter().map(|l| (*l - 1) as u32).collect();
    let idx = Tensor::from_vec(idx, (b, 1), out.domain_logits.device())?;
    let ce = log_softmax(&out.domain_logits, 1)?.gather(&idx, 1)?.neg()?.mean_all()?;

    let (wp, wc, we) = cfg.weights;
    let total = (((&pixel * wp)? + (&chamfer_t * wc)?)? + (&ce * we)?)?;
    let host = |t: &Tensor| -> Result<f64> { Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?) };
    let breakdown = LossBreakdown::new(host(&pixel)?, chamfer, host(&ce)?, cfg.weights);
    Ok((total, breakdown))
}
