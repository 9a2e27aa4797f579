//! The depth network: backbone, bottleneck transformer with bin and domain
//! queries, bin and domain heads, fusion, and the hierarchical decoder.

pub mod backbone;
pub mod decoder;
pub mod heads;
pub mod pst;

use candle_core::{DType, Device, Tensor};
use depthbins::bins::{BinCenterVector, BinKind, ProbabilityVolume};
use depthbins::domains::{BinBank, DomainProbability, RangeDomainSet};
use depthbins::fov::AlignedSample;
use depthbins::maps::DepthMap;

use crate::config::{BinMode, ModelConfig, RunConfig};
use crate::error::{NetError, Result};
use crate::ops::{hflip, resize_bilinear};
use crate::params::{load_checkpoint, Checkpoint, ParamStore};
use backbone::{stage_channels, Backbone, FeaturePyramid};
use decoder::{Decoder, DecoderSpec};
use heads::{domain_probs, fuse, BinHead, BinHeadSpec, DomainHead};
use pst::{Pst, PstSpec, QueryBundle};

pub struct Model {
    cfg: ModelConfig,
    rds: RangeDomainSet,
    ps: ParamStore,
    backbone: Backbone,
    pst: Pst,
    bin_head: BinHead,
    domain_head: DomainHead,
    decoder: Decoder,
}

/// Batched network outputs.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// `D'_s` as `(B, h_s, w_s)`, coarse to fine.
    pub stage_depths: Vec<Tensor>,
    /// Per-stage probability volumes `(B, N, h_s, w_s)`.
    pub stage_probs: Vec<Tensor>,
    pub domain_logits: Tensor,
    pub domain_probs: Tensor,
    /// Per-domain centers `(B, K_b, N)`.
    pub bank: Tensor,
    /// Fused centers `(B, N)`.
    pub fused: Tensor,
    /// Bilinear upsample of the last stage to the input size, `(B, H, W)`.
    pub full_depth: Tensor,
}

/// One sample's outputs on the host.
#[derive(Clone, Debug)]
pub struct PredictionBundle {
    pub stage_depths: Vec<DepthMap>,
    pub domain_probs: DomainProbability,
    pub domain_logits: Vec<f64>,
    /// Holds a single vector when the model is not domain aware.
    pub bin_bank: BinBank,
    pub fused_centers: BinCenterVector,
    pub full_depth: DepthMap,
    /// Probability volume of the finest stage.
    pub final_probs: ProbabilityVolume,
}

fn to_host(t: &Tensor) -> Result<Vec<f64>> {
    Ok(t.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?)
}

fn depth_map(t: &Tensor) -> Result<DepthMap> {
    let (h, w) = t.dims2()?;
    let v = to_host(t)?.into_iter().map(|x| x as f32).collect();
    Ok(DepthMap::new(w, h, v, vec![true; w * h])?)
}

impl Model {
    pub fn new(cfg: &ModelConfig, seed: u64, dtype: DType) -> Result<Self> {
        let mut ps = ParamStore::new(seed, dtype, Device::Cpu);
        let rds = cfg.range_set()?;
        let (h1, w1) = cfg.stage_size(1);
        if h1 == 0 || w1 == 0 {
            return Err(NetError::Config(format!("input {}x{} is too small", cfg.input_w, cfg.input_h)));
        }
        let chans = stage_channels(cfg.base_channels);
        let backbone = Backbone::new(&mut ps, cfg.base_channels)?;
        let bank_size = cfg.bank_size();
        let pst = Pst::new(
            &mut ps,
            &PstSpec {
                channels: chans[4],
                size: (h1, w1),
                patch_sizes: cfg.pst_patch_sizes.clone(),
                depth: cfg.pst_depth,
                heads: cfg.pst_heads,
                dim: cfg.pst_dim,
                n_bin_queries: BinHead::n_queries(cfg.head_variant, bank_size),
            },
        )?;
        let intervals = if cfg.domain_aware {
            (1..=rds.k_count()).map(|k| rds.interval(k)).collect()
        } else {
            vec![(rds.z_min, rds.z_max)]
        };
        let bin_head = BinHead::new(
            &mut ps,
            &BinHeadSpec {
                variant: cfg.head_variant,
                mode: cfg.bin_mode,
                dim: cfg.pst_dim,
                n_bins: cfg.n_bins,
                bank_size,
                intervals,
            },
        )?;
        let domain_head = DomainHead::new(&mut ps, cfg.pst_dim, cfg.k_domains)?;
        let mut enc = chans;
        enc.reverse();
        let decoder = Decoder::new(
            &mut ps,
            &DecoderSpec {
                encoder_channels: enc,
                channels: cfg.decoder_channels,
                n_bins: cfg.n_bins,
                hsc: cfg.hsc,
                z_max: cfg.z_max,
            },
        )?;
        Ok(Self {
            cfg: cfg.clone(),
            rds,
            ps,
            backbone,
            pst,
            bin_head,
            domain_head,
            decoder,
        })
    }

    /// Rebuilds the model stored in `ckpt`. When `expected` is given its
    /// architecture must match the checkpoint's exactly.
    pub fn from_checkpoint(ckpt: &Checkpoint, expected: Option<&ModelConfig>) -> Result<(Self, RunConfig)> {
        let run: RunConfig = serde_json::from_value(ckpt.config.clone()).map_err(|e| NetError::Checkpoint {
            path: ckpt.path.clone(),
            reason: format!("config echo unreadable: {e}"),
        })?;
        let cfg = run.model();
        if let Some(want) = expected {
            if want != &cfg {
                return Err(NetError::Checkpoint {
                    path: ckpt.path.clone(),
                    reason: format!(
                        "architecture mismatch: checkpoint has {}, config asks for {}",
                        serde_json::to_string(&cfg)?,
                        serde_json::to_string(want)?
                    ),
                });
            }
        }
        let model = Self::new(&cfg, run.seed, DType::F32)?;
        model.ps.load_tensors(&ckpt.tensors, &ckpt.path)?;
        Ok((model, run))
    }

    pub fn load(path: &std::path::Path, expected: Option<&ModelConfig>) -> Result<(Self, RunConfig)> {
        Self::from_checkpoint(&load_checkpoint(path)?, expected)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn range_set(&self) -> &RangeDomainSet {
        &self.rds
    }

    pub fn params(&self) -> &ParamStore {
        &self.ps
    }

    pub fn dtype(&self) -> DType {
        self.ps.dtype()
    }

    /// `(B, 3, H, W)` input from aligned samples, scaled to `[-1, 1]`.
    pub fn image_tensor(&self, samples: &[&AlignedSample]) -> Result<Tensor> {
        let (h, w) = (self.cfg.input_h, self.cfg.input_w);
        let mut data = Vec::with_capacity(samples.len() * h * w * 3);
        for s in samples {
            if (s.height(), s.width()) != (h, w) {
                return Err(NetError::InputSize {
                    expected: (w, h),
                    actual: (s.width(), s.height()),
                });
            }
            data.extend(s.image.data.iter().map(|v| v / 127.5 - 1.0));
        }
        let t = Tensor::from_vec(data, (samples.len(), h, w, 3), &Device::Cpu)?;
        Ok(t.permute((0, 3, 1, 2))?.contiguous()?.to_dtype(self.dtype())?)
    }

    pub fn backbone_forward(&self, images: &Tensor) -> Result<FeaturePyramid> {
        let (_, c, h, w) = images.dims4()?;
        if c != 3 || (h, w) != (self.cfg.input_h, self.cfg.input_w) {
            return Err(NetError::InputSize {
                expected: (self.cfg.input_w, self.cfg.input_h),
                actual: (w, h),
            });
        }
        self.backbone.forward(images)
    }

    pub fn pst_forward(&self, f1: &Tensor) -> Result<(Tensor, QueryBundle)> {
        self.pst.forward(f1)
    }

    pub fn bin_head(&self) -> &BinHead {
        &self.bin_head
    }

    pub fn forward(&self, images: &Tensor) -> Result<ForwardOutput> {
        let pyr = self.backbone_forward(images)?;
        let (context, queries) = self.pst.forward(pyr.stage(1))?;
        let raw = self.bin_head.raw(&queries.bin_query_outputs)?;
        let bank = self.bin_head.centers(&raw)?;
        let domain_logits = self.domain_head.logits(&queries.domain_query_output)?;
        let y = domain_probs(&domain_logits)?;
        let fused = fuse(&bank, &y, self.cfg.fusion, self.cfg.domain_aware)?;
        let dec = self.decoder.forward(&pyr.features, &context, &fused)?;
        let last = dec.depths.last().expect("decoder emits the final stage");
        let full_depth = resize_bilinear(last, self.cfg.input_h, self.cfg.input_w)?;
        Ok(ForwardOutput {
            stage_depths: dec.depths,
            stage_probs: dec.probs,
            domain_logits,
            domain_probs: y,
            bank,
            fused,
            full_depth,
        })
    }

    /// Host-side outputs for sample `i` of a batch.
    pub fn bundle(&self, out: &ForwardOutput, i: usize) -> Result<PredictionBundle> {
        let kind = match self.cfg.bin_mode {
            BinMode::Variation => BinKind::VariationBased,
            BinMode::Width => BinKind::WidthBased,
        };
        let n = self.cfg.n_bins;
        let bank = to_host(&out.bank.get(i)?)?;
        let bin_bank = BinBank::new(bank.chunks(n).map(|c| BinCenterVector::new(c.to_vec(), kind)).collect())?;
        let y = to_host(&out.domain_probs.get(i)?)?;
        let probs = out.stage_probs.last().expect("final stage").get(i)?;
        let (nb, h, w) = probs.dims3()?;
        let probs = to_host(&probs.permute((1, 2, 0))?)?.into_iter().map(|v| v as f32).collect();
        Ok(PredictionBundle {
            stage_depths: out.stage_depths.iter().map(|d| depth_map(&d.get(i)?)).collect::<Result<_>>()?,
            domain_probs: DomainProbability { y },
            domain_logits: to_host(&out.domain_logits.get(i)?)?,
            bin_bank,
            fused_centers: BinCenterVector::new(to_host(&out.fused.get(i)?)?, BinKind::Fused),
            full_depth: depth_map(&out.full_depth.get(i)?)?,
            final_probs: ProbabilityVolume::new(h, w, nb, probs)?,
        })
    }

    pub fn forward_sample(&self, sample: &AlignedSample) -> Result<PredictionBundle> {
        let out = self.forward(&self.image_tensor(&[sample])?)?;
        self.bundle(&out, 0)
    }

    /// Mean of the prediction for the image and the un-flipped prediction
    /// for its mirror, clamped to the evaluation floor.
    pub fn predict_with_mirror(&self, sample: &AlignedSample) -> Result<DepthMap> {
        let (d, _) = self.predict_with_mirror_bundle(sample)?;
        Ok(d)
    }

    /// [`Model::predict_with_mirror`] plus the bundle of the unflipped pass.
    pub fn predict_with_mirror_bundle(&self, sample: &AlignedSample) -> Result<(DepthMap, PredictionBundle)> {
        let img = self.image_tensor(&[sample])?;
        let both = Tensor::cat(&[&img, &hflip(&img)?], 0)?;
        let out = self.forward(&both)?;
        let a = out.full_depth.get(0)?;
        let b = hflip(&out.full_depth.get(1)?)?;
        let avg = ((a + b)? * 0.5)?.clamp(depthbins::metrics::PRED_FLOOR, f64::MAX)?;
        Ok((depth_map(&avg)?, self.bundle(&out, 0)?))
    }
}
