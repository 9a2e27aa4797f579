//! Seeded training loop: Adam(W) with linear learning-rate decay, per-epoch
//! validation, a JSON-lines log and a checkpoint after every epoch.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use candle_core::DType;
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use depthbins::data::{splitmix64, DepthSample};
use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{NetError, Result};
use crate::model::Model;
use crate::objectives::{batch_loss, LossBreakdown, LossConfig};
use crate::params::{load_checkpoint, save_checkpoint};
use crate::pipeline::{augment_config, make_batch, prepare, prepare_augmented, PreparedSample};

pub const CHECKPOINT_NAME: &str = "checkpoint.ckpt";
pub const LOG_NAME: &str = "train_log.jsonl";

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    pub lr: f64,
    pub train: LossBreakdown,
    pub val: Option<LossBreakdown>,
    pub val_rd_accuracy: Option<f64>,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Receives the checkpoint and the log; nothing is written when absent.
    pub out_dir: Option<PathBuf>,
    /// Checkpoint to continue from.
    pub resume: Option<PathBuf>,
}

pub struct TrainOutcome {
    pub model: Model,
    pub logs: Vec<EpochLog>,
    pub checkpoint: Option<PathBuf>,
}

/// Linear decay from `start` at step 0 to `end` at the last step.
pub fn lr_at(start: f64, end: f64, step: usize, total: usize) -> f64 {
    if total <= 1 {
        return start;
    }
    start + (end - start) * step as f64 / (total - 1) as f64
}

fn mean_breakdown(items: &[(LossBreakdown, usize)]) -> Option<LossBreakdown> {
    let n: usize = items.iter().map(|(_, c)| c).sum();
    let (first, _) = items.first()?;
    let avg = |f: fn(&LossBreakdown) -> f64| items.iter().map(|(b, c)| f(b) * *c as f64).sum::<f64>() / n as f64;
    Some(LossBreakdown::new(
        avg(|b| b.pixel),
        avg(|b| b.chamfer),
        avg(|b| b.domain_ce),
        first.weights,
    ))
}

/// Loss breakdown and RD accuracy over prepared samples, without
/// augmentation or gradient tracking.
pub fn validate(model: &Model, samples: &[PreparedSample], cfg: &RunConfig) -> Result<(LossBreakdown, f64)> {
    let loss_cfg = LossConfig::from_run(cfg);
    let mut parts = Vec::new();
    let mut correct = 0;
    for (b, chunk) in samples.chunks(cfg.batch_size).enumerate() {
        let refs: Vec<&PreparedSample> = chunk.iter().collect();
        let (images, targets) = make_batch(model, &refs, cfg.chamfer_cap, splitmix64(cfg.seed ^ b as u64))?;
        let out = model.forward(&images)?;
        let (_, breakdown) = batch_loss(&out, &targets, &loss_cfg)?;
        parts.push((breakdown, chunk.len()));
        let pred = out.domain_probs.argmax(1)?.to_vec1::<u32>()?;
        correct += pred.iter().zip(&targets.labels).filter(|(p, l)| **p as usize + 1 == **l).count();
    }
    let mean = mean_breakdown(&parts).ok_or_else(|| NetError::Config("empty validation set".into()))?;
    Ok((mean, correct as f64 / samples.len() as f64))
}

/// Aligns every sample for evaluation.
pub fn prepare_all(samples: &[DepthSample], cfg: &RunConfig) -> Result<Vec<PreparedSample>> {
    let fov = cfg.fov()?;
    let rds = cfg.range_set()?;
    samples.iter().map(|s| prepare(s, &fov, &rds, cfg.label_percentile)).collect()
}

pub fn train(cfg: &RunConfig, train_set: &[DepthSample], val_set: &[PreparedSample], opts: &TrainOptions) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(NetError::Config("empty training set".into()));
    }
    let (model, start_epoch) = match &opts.resume {
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            let epoch = ckpt.epoch;
            let (m, _) = Model::from_checkpoint(&ckpt, Some(&cfg.model()))?;
            info!("resuming from {} after epoch {epoch}", path.display());
            (m, epoch)
        }
        None => (Model::new(&cfg.model(), cfg.seed, DType::F32)?, 0),
    };
    if let Some(dir) = &opts.out_dir {
        fs::create_dir_all(dir)?;
    }
    let config_echo = serde_json::to_value(cfg)?;
    let loss_cfg = LossConfig::from_run(cfg);
    let aug = augment_config(cfg);
    let fov = cfg.fov()?;
    let rds = cfg.range_set()?;
    let steps_per_epoch = train_set.len().div_ceil(cfg.batch_size);
    let total_steps = steps_per_epoch * cfg.epochs;

    let mut opt = AdamW::new(
        model.params().vars(),
        ParamsAdamW {
            lr: cfg.lr_start,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: 1e-8,
            weight_decay: cfg.weight_decay,
        },
    )?;

    let mut logs = Vec::new();
    let mut checkpoint = None;
    for epoch in start_epoch + 1..=cfg.epochs {
        let t0 = Instant::now();
        let epoch_seed = splitmix64(cfg.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9));
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
        let mut parts = Vec::with_capacity(steps_per_epoch);
        let mut lr = cfg.lr_start;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let step = (epoch - 1) * steps_per_epoch + b;
            lr = lr_at(cfg.lr_start, cfg.lr_end, step, total_steps);
            opt.set_learning_rate(lr);
            let prepared = idx
                .iter()
                .map(|i| {
                    let seed = splitmix64(epoch_seed ^ (*i as u64).wrapping_mul(0xD6E8_FEB8_6659_FD93));
                    prepare_augmented(&train_set[*i], seed, &aug, &fov, &rds, cfg.label_percentile)
                })
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<&PreparedSample> = prepared.iter().collect();
            let (images, targets) = make_batch(&model, &refs, cfg.chamfer_cap, splitmix64(epoch_seed ^ b as u64))?;
            let out = model.forward(&images)?;
            let (total, breakdown) = batch_loss(&out, &targets, &loss_cfg)?;
            if !breakdown.is_finite() {
                return Err(NetError::NonFinite {
                    epoch,
                    step: b,
                    detail: format!(
                        "pixel={} chamfer={} domain_ce={} lr={lr:e}",
                        breakdown.pixel, breakdown.chamfer, breakdown.domain_ce
                    ),
                });
            }
            let grads = total.backward()?;
            opt.step(&grads)?;
            parts.push((breakdown, idx.len()));
        }
        let train_mean = mean_breakdown(&parts).expect("at least one batch");
        let (val, acc) = if val_set.is_empty() {
            (None, None)
        } else {
            let (v, a) = validate(&model, val_set, cfg)?;
            (Some(v), Some(a))
        };
        let entry = EpochLog {
            epoch,
            lr,
            train: train_mean,
            val,
            val_rd_accuracy: acc,
            seconds: t0.elapsed().as_secs_f64(),
        };
        info!(
            "epoch {epoch}/{}: loss {:.4} (pixel {:.4}, chamfer {:.4}, ce {:.4}) val acc {} in {:.1}s",
            cfg.epochs,
            entry.train.total,
            entry.train.pixel,
            entry.train.chamfer,
            entry.train.domain_ce,
            acc.map_or("-".into(), |a| format!("{a:.3}")),
            entry.seconds
        );
        if let Some(dir) = &opts.out_dir {
            append_log(&dir.join(LOG_NAME), &entry)?;
            let path = dir.join(CHECKPOINT_NAME);
            save_checkpoint(&path, &config_echo, epoch, model.params())?;
            checkpoint = Some(path);
        }
        logs.push(entry);
    }
    Ok(TrainOutcome {
        model,
        logs,
        checkpoint,
    })
}

fn append_log(path: &Path, entry: &EpochLog) -> Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    writeln!(f, "{}", serde_json::to_string(entry)?)?;
    Ok(())
}

pub fn read_log(path: &Path) -> Result<Vec<EpochLog>> {
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}
