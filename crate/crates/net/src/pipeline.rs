//! Sample sources, FOV-aligned preparation and batch assembly.

use std::path::PathBuf;
use std::sync::Arc;

use candle_core::Tensor;
use depthbins::bins::subsample_depths;
use depthbins::data::{
    augment, frame_paths, list_dataset, load_rgbd_sample, make_split, splitmix64, AugmentConfig, DepthSample,
    SampleMeta, SynthConfig, SynthEntry,
};
use depthbins::domains::{rd_label, RangeDomainSet};
use depthbins::fov::{align_fov, AlignedSample, CameraIntrinsics, FovSpec};
use depthbins::maps::DepthMap;

use crate::config::RunConfig;
use crate::error::{config, Result};
use crate::model::Model;
use crate::objectives::{StageTarget, Targets};

const VAL_SALT: u64 = 0x7A1D_A7E5_0000_0001;
const SEQUENCE_SALT: u64 = 0x5E9E_0CE5_0000_0002;

/// An ordered list of loadable samples.
#[derive(Clone, Debug)]
pub enum SampleSource {
    Synth { template: SynthConfig, entries: Vec<SynthEntry> },
    Dir { root: PathBuf, ids: Vec<String> },
}

impl SampleSource {
    pub fn len(&self) -> usize {
        match self {
            Self::Synth { entries, .. } => entries.len(),
            Self::Dir { ids, .. } => ids.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn load(&self, i: usize) -> Result<DepthSample> {
        match self {
            Self::Synth { template, entries } => {
                let e = entries[i];
                let mut s = depthbins::data::synth_scene(&template.with_seed(e.seed, depthbins::data::RdChoice::Index(e.rd_index)))?;
                s.meta.frame_id = format!("{i:05}");
                Ok(s)
            }
            Self::Dir { root, ids } => {
                let (rgb, depth, side) = frame_paths(root, &ids[i]);
                Ok(load_rgbd_sample(&rgb, &depth, &side)?)
            }
        }
    }

    pub fn load_all(&self) -> Result<Vec<DepthSample>> {
        (0..self.len()).map(|i| self.load(i)).collect()
    }
}

#[derive(Clone, Debug)]
pub struct Splits {
    pub train: SampleSource,
    pub val: SampleSource,
    pub test: SampleSource,
}

pub fn synth_template(cfg: &RunConfig) -> Result<SynthConfig> {
    let mut t = SynthConfig::new(cfg.range_set()?);
    t.seed = cfg.seed;
    t.width = cfg.synth_width;
    t.height = cfg.synth_height;
    t.fx_jitter = cfg.fx_jitter;
    t.texture_freq = cfg.texture_freq;
    t.shape_count = (cfg.shape_min, cfg.shape_max);
    t.sky_prob = cfg.sky_prob;
    Ok(t)
}

/// Train/val/test sources. Synthetic splits are balanced over the range
/// domains; the validation scenes come from a separately salted seed
/// stream. A directory is split by frame-id hash, 10% held out, and the
/// held-out part doubles as the validation set.
pub fn build_splits(cfg: &RunConfig) -> Result<Splits> {
    match &cfg.dataset_dir {
        None => {
            let template = synth_template(cfg)?;
            let mix = vec![1.0 / cfg.k_domains as f64; cfg.k_domains];
            let main = make_split(&template, cfg.train_samples, cfg.test_samples, &mix)?;
            let val_t = SynthConfig {
                seed: splitmix64(cfg.seed ^ VAL_SALT),
                ..template.clone()
            };
            let val = make_split(&val_t, 0, cfg.val_samples, &mix)?;
            Ok(Splits {
                train: SampleSource::Synth {
                    template: template.clone(),
                    entries: main.train,
                },
                val: SampleSource::Synth {
                    template: template.clone(),
                    entries: val.test,
                },
                test: SampleSource::Synth {
                    template,
                    entries: main.test,
                },
            })
        }
        Some(dir) => {
            let root = PathBuf::from(dir);
            let ids = list_dataset(&root)?;
            let (test, train): (Vec<String>, Vec<String>) = ids.into_iter().partition(|id| id_is_test(id));
            if train.is_empty() || test.is_empty() {
                return Err(config(format!("{dir} needs frames on both sides of the 90/10 split")));
            }
            let val: Vec<String> = test.iter().take(cfg.val_samples.max(1)).cloned().collect();
            Ok(Splits {
                train: SampleSource::Dir {
                    root: root.clone(),
                    ids: train,
                },
                val: SampleSource::Dir { root: root.clone(), ids: val },
                test: SampleSource::Dir { root, ids: test },
            })
        }
    }
}

/// An ordered "video" of `n` synthetic frames that sweeps the range
/// domains up and back down in equal runs, so indoor and outdoor stretches
/// alternate. Seeds are disjoint from the training stream.
pub fn synth_sequence(cfg: &RunConfig, n: usize) -> Result<SampleSource> {
    let template = synth_template(cfg)?;
    let k = cfg.k_domains;
    let cycle: Vec<usize> = (1..=k).chain((1..k).rev()).collect();
    let run = (n / (2 * cycle.len())).max(1);
    let base = splitmix64(cfg.seed ^ SEQUENCE_SALT);
    let entries = (0..n)
        .map(|i| SynthEntry {
            seed: splitmix64(base ^ i as u64),
            rd_index: cycle[(i / run) % cycle.len()],
        })
        .collect();
    Ok(SampleSource::Synth { template, entries })
}

fn id_is_test(id: &str) -> bool {
    let h = id.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3));
    splitmix64(h).is_multiple_of(10)
}

/// A sample aligned to the model's FOV with its range-domain label.
#[derive(Clone, Debug)]
pub struct PreparedSample {
    pub aligned: AlignedSample,
    pub intrinsics: CameraIntrinsics,
    /// Ground truth at source resolution, for evaluation.
    pub source_depth: DepthMap,
    pub label: usize,
    pub meta: SampleMeta,
}

pub fn prepare(sample: &DepthSample, fov: &FovSpec, rds: &RangeDomainSet, percentile: f64) -> Result<PreparedSample> {
    let aligned = align_fov(&sample.rgb, Some(&sample.depth), &sample.intrinsics, fov)?;
    Ok(PreparedSample {
        aligned,
        intrinsics: sample.intrinsics,
        source_depth: sample.depth.clone(),
        label: rd_label(&sample.depth, rds, percentile)?,
        meta: sample.meta.clone(),
    })
}

/// Augments with `seed`, then aligns.
pub fn prepare_augmented(
    sample: &DepthSample,
    seed: u64,
    aug: &AugmentConfig,
    fov: &FovSpec,
    rds: &RangeDomainSet,
    percentile: f64,
) -> Result<PreparedSample> {
    prepare(&augment(sample, seed, aug), fov, rds, percentile)
}

pub fn augment_config(cfg: &RunConfig) -> AugmentConfig {
    AugmentConfig {
        flip_prob: cfg.flip_prob,
        brightness: cfg.brightness,
        contrast: cfg.contrast,
    }
}

/// Input tensor and supervision for a batch of prepared samples.
pub fn make_batch(model: &Model, samples: &[&PreparedSample], chamfer_cap: usize, seed: u64) -> Result<(Tensor, Targets)> {
    let aligned: Vec<&AlignedSample> = samples.iter().map(|s| &s.aligned).collect();
    let images = model.image_tensor(&aligned)?;
    let cfg = model.config();
    let stages: Vec<usize> = if cfg.hsc { (1..=5).collect() } else { vec![5] };
    let gts: Vec<&DepthMap> = samples
        .iter()
        .map(|s| s.aligned.depth.as_ref().ok_or_else(|| config("training sample without depth")))
        .collect::<Result<_>>()?;
    let mut targets = Vec::with_capacity(stages.len());
    for s in stages {
        let (h, w) = cfg.stage_size(s);
        let maps: Vec<DepthMap> = gts.iter().map(|g| g.resize_nearest(w, h)).collect();
        targets.push(StageTarget::from_maps(&maps, model.dtype())?);
    }
    let chamfer_depths = gts
        .iter()
        .enumerate()
        .map(|(i, g)| subsample_depths(&g.valid_depths(), chamfer_cap, splitmix64(seed ^ i as u64)))
        .collect();
    Ok((
        images,
        Targets {
            stages: targets,
            labels: samples.iter().map(|s| s.label).collect(),
            chamfer_depths,
        },
    ))
}

/// Samples shared by several consumers without copying.
pub type SharedSamples = Arc<Vec<DepthSample>>;
