//! Run configuration: one flat TOML table, validated on load, unknown keys
//! rejected. Defaults mirror the full-scale protocol; [`RunConfig::toy`]
//! is the desk-scale preset used by tests and the acceptance suite.

use std::path::Path;

use depthbins::domains::{PartitionStrategy, RangeDomainSet};
use depthbins::fov::FovSpec;
use serde::{Deserialize, Serialize};

use crate::error::{config, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadVariant {
    /// K bin queries, one shared FFN.
    SharedFfn,
    /// One bin query, K FFNs.
    OneQueryKFfn,
    /// K bin queries, one FFN each.
    KQueryKFfn,
}

impl HeadVariant {
    pub const ALL: [HeadVariant; 3] = [Self::SharedFfn, Self::OneQueryKFfn, Self::KQueryKFfn];

    pub fn label(&self) -> &'static str {
        match self {
            Self::SharedFfn => "shared_ffn",
            Self::OneQueryKFfn => "one_query_k_ffn",
            Self::KQueryKFfn => "k_query_k_ffn",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinMode {
    /// Sign-free variations accumulated into unnormalized centers.
    Variation,
    /// Normalized widths laid over each domain's depth interval.
    Width,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    /// Probability-weighted sum of the per-domain vectors.
    Weighted,
    /// Vector of the most probable domain only.
    Hard,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChamferReduction {
    Sum,
    /// Each direction averaged over its point count.
    Mean,
}

/// Architecture-defining subset of [`RunConfig`]; a checkpoint is only
/// loadable into a model with an identical `ModelConfig`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_bins: usize,
    pub k_domains: usize,
    pub z_min: f64,
    pub z_max: f64,
    pub partition: PartitionStrategy,
    pub base_channels: usize,
    pub decoder_channels: usize,
    pub pst_patch_sizes: Vec<usize>,
    pub pst_depth: usize,
    pub pst_heads: usize,
    pub pst_dim: usize,
    pub head_variant: HeadVariant,
    pub bin_mode: BinMode,
    pub fusion: Fusion,
    pub domain_aware: bool,
    pub hsc: bool,
    pub input_h: usize,
    pub input_w: usize,
}

impl ModelConfig {
    pub fn range_set(&self) -> Result<RangeDomainSet> {
        Ok(RangeDomainSet::build(self.z_min, self.z_max, self.k_domains, self.partition)?)
    }

    /// Resolution of decoder stage `s` (1..=5): `floor(h / 2^(6-s))`.
    pub fn stage_size(&self, s: usize) -> (usize, usize) {
        let f = 1usize << (6 - s);
        (self.input_h / f, self.input_w / f)
    }

    /// Number of per-domain bin vectors produced by the head.
    pub fn bank_size(&self) -> usize {
        if self.domain_aware {
            self.k_domains
        } else {
            1
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,

    pub n_bins: usize,
    pub k_domains: usize,
    pub z_min: f64,
    pub z_max: f64,
    pub partition: PartitionStrategy,
    pub base_channels: usize,
    pub decoder_channels: usize,
    pub pst_patch_sizes: Vec<usize>,
    pub pst_depth: usize,
    pub pst_heads: usize,
    pub pst_dim: usize,
    pub head_variant: HeadVariant,
    pub bin_mode: BinMode,
    pub fusion: Fusion,
    pub domain_aware: bool,
    pub hsc: bool,

    pub fov_x_deg: f64,
    pub fov_y_deg: f64,
    pub input_w: usize,
    pub input_h: usize,

    pub lr_start: f64,
    pub lr_end: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,

    pub lambda_pixel: f64,
    pub lambda_chamfer: f64,
    pub lambda_ce: f64,
    pub silog_alpha: f64,
    pub silog_lambda: f64,
    pub chamfer_reduction: ChamferReduction,
    pub chamfer_cap: usize,
    pub label_percentile: f64,

    pub flip_prob: f64,
    pub brightness: f64,
    pub contrast: f64,

    /// Directory in the on-disk RGB-D layout; synthetic data when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset_dir: Option<String>,
    pub train_samples: usize,
    pub val_samples: usize,
    pub test_samples: usize,
    pub synth_width: usize,
    pub synth_height: usize,
    pub fx_jitter: f64,
    pub texture_freq: f64,
    pub shape_min: usize,
    pub shape_max: usize,
    pub sky_prob: f64,
    /// Evaluation depth cap; defaults to each sample's declared range.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_cap: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_bins: 256,
            k_domains: 4,
            z_min: 0.0,
            z_max: 80.0,
            partition: PartitionStrategy::SpaceIncreasing,
            base_channels: 32,
            decoder_channels: 64,
            pst_patch_sizes: vec![1, 2, 4],
            pst_depth: 2,
            pst_heads: 4,
            pst_dim: 256,
            head_variant: HeadVariant::SharedFfn,
            bin_mode: BinMode::Variation,
            fusion: Fusion::Weighted,
            domain_aware: true,
            hsc: true,
            fov_x_deg: 58.0,
            fov_y_deg: 45.0,
            input_w: 564,
            input_h: 424,
            lr_start: 2e-5,
            lr_end: 2e-6,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 0.0,
            epochs: 20,
            batch_size: 10,
            lambda_pixel: 1.0,
            lambda_chamfer: 0.1,
            lambda_ce: 0.1,
            silog_alpha: 10.0,
            silog_lambda: 0.85,
            chamfer_reduction: ChamferReduction::Mean,
            chamfer_cap: depthbins::bins::CHAMFER_SUBSAMPLE_CAP,
            label_percentile: depthbins::domains::DEFAULT_LABEL_PERCENTILE,
            flip_prob: 0.5,
            brightness: 0.1,
            contrast: 0.1,
            dataset_dir: None,
            train_samples: 2000,
            val_samples: 100,
            test_samples: 200,
            synth_width: 80,
            synth_height: 60,
            fx_jitter: 0.1,
            texture_freq: 6.0,
            shape_min: 1,
            shape_max: 4,
            sky_prob: 0.5,
            eval_cap: None,
        }
    }
}

impl RunConfig {
    /// Desk-scale preset: 64x64 input, N=64, narrow layers, larger steps.
    pub fn toy() -> Self {
        Self {
            n_bins: 64,
            base_channels: 8,
            decoder_channels: 16,
            pst_patch_sizes: vec![1, 2],
            pst_dim: 64,
            input_w: 64,
            input_h: 64,
            lr_start: 1e-3,
            lr_end: 1e-4,
            epochs: 12,
            batch_size: 8,
            ..Self::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            n_bins: self.n_bins,
            k_domains: self.k_domains,
            z_min: self.z_min,
            z_max: self.z_max,
            partition: self.partition,
            base_channels: self.base_channels,
            decoder_channels: self.decoder_channels,
            pst_patch_sizes: self.pst_patch_sizes.clone(),
            pst_depth: self.pst_depth,
            pst_heads: self.pst_heads,
            pst_dim: self.pst_dim,
            head_variant: self.head_variant,
            bin_mode: self.bin_mode,
            fusion: self.fusion,
            domain_aware: self.domain_aware,
            hsc: self.hsc,
            input_h: self.input_h,
            input_w: self.input_w,
        }
    }

    pub fn fov(&self) -> Result<FovSpec> {
        Ok(FovSpec::from_degrees(self.fov_x_deg, self.fov_y_deg, self.input_w, self.input_h)?)
    }

    pub fn range_set(&self) -> Result<RangeDomainSet> {
        self.model().range_set()
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| if ok { Ok(()) } else { Err(config(msg)) };
        check(self.n_bins >= 2, "n_bins must be at least 2")?;
        check(self.k_domains >= 1, "k_domains must be at least 1")?;
        check(self.z_min.is_finite() && self.z_max > self.z_min, "need z_max > z_min")?;
        check(self.base_channels >= 1 && self.decoder_channels >= 1, "channel counts must be positive")?;
        check(!self.pst_patch_sizes.is_empty(), "pst_patch_sizes must not be empty")?;
        check(self.pst_patch_sizes.iter().all(|p| *p >= 1), "patch sizes must be at least 1")?;
        check(self.pst_depth >= 1 && self.pst_heads >= 1, "pst_depth and pst_heads must be positive")?;
        check(self.pst_dim.is_multiple_of(self.pst_heads), "pst_dim must be divisible by pst_heads")?;
        check(self.input_w >= 32 && self.input_h >= 32, "input must be at least 32x32")?;
        let (h1, w1) = self.model().stage_size(1);
        check(
            self.pst_patch_sizes.iter().all(|p| *p <= h1 && *p <= w1),
            &format!("a PST patch size exceeds the {h1}x{w1} bottleneck feature"),
        )?;
        for (deg, name) in [(self.fov_x_deg, "fov_x_deg"), (self.fov_y_deg, "fov_y_deg")] {
            check(deg > 0.0 && deg < 180.0, &format!("{name} must be in (0, 180)"))?;
        }
        check(self.lr_start > 0.0 && self.lr_end > 0.0, "learning rates must be positive")?;
        check((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2), "betas must be in [0, 1)")?;
        check(self.weight_decay >= 0.0, "weight_decay must be non-negative")?;
        check(self.epochs >= 1 && self.batch_size >= 1, "epochs and batch_size must be positive")?;
        check(
            [self.lambda_pixel, self.lambda_chamfer, self.lambda_ce].iter().all(|l| *l >= 0.0 && l.is_finite()),
            "loss weights must be finite and non-negative",
        )?;
        check(self.silog_alpha > 0.0 && (0.0..=1.0).contains(&self.silog_lambda), "invalid SILog constants")?;
        check(self.chamfer_cap >= 1, "chamfer_cap must be positive")?;
        check(self.label_percentile > 0.0 && self.label_percentile <= 1.0, "label_percentile must be in (0, 1]")?;
        check((0.0..=1.0).contains(&self.flip_prob), "flip_prob must be in [0, 1]")?;
        check((0.0..1.0).contains(&self.brightness) && (0.0..1.0).contains(&self.contrast), "jitter must be in [0, 1)")?;
        check(self.train_samples >= 1, "train_samples must be positive")?;
        check(self.synth_width >= 8 && self.synth_height >= 8, "synthetic images need at least 8x8 pixels")?;
        check((0.0..1.0).contains(&self.fx_jitter), "fx_jitter must be in [0, 1)")?;
        check(self.shape_min <= self.shape_max, "shape_min must not exceed shape_max")?;
        check(self.texture_freq > 0.0 && (0.0..=1.0).contains(&self.sky_prob), "invalid texture_freq or sky_prob")?;
        if let Some(cap) = self.eval_cap {
            check(cap > 0.0, "eval_cap must be positive")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_round_trip() {
        for cfg in [RunConfig::default(), RunConfig::toy()] {
            cfg.validate().unwrap();
            let text = cfg.to_toml().unwrap();
            let back = RunConfig::from_toml_str(&text).unwrap();
            assert_eq!(back, cfg);
            assert_eq!(back.to_toml().unwrap(), text);
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml_str("n_bins = 8\nbogus = 1\n").is_err());
        let cfg = RunConfig::from_toml_str("n_bins = 8\nhead_variant = \"k_query_k_ffn\"\n").unwrap();
        assert_eq!((cfg.n_bins, cfg.head_variant), (8, HeadVariant::KQueryKFfn));
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(RunConfig::from_toml_str("n_bins = 1").is_err());
        assert!(RunConfig::from_toml_str("z_max = -1.0").is_err());
        assert!(RunConfig::from_toml_str("input_w = 64\ninput_h = 64\npst_patch_sizes = [4]").is_err());
    }

    #[test]
    fn stage_sizes_follow_floor_schedule() {
        let m = RunConfig::default().model();
        assert_eq!(m.stage_size(1), (13, 17));
        assert_eq!(m.stage_size(5), (212, 282));
    }
}
