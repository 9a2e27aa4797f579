use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use depthbins::domains::{PartitionStrategy, RangeDomainSet};
use depthbins::fov::{align_fov, inverse_align, CameraIntrinsics};
use depthbins::maps::{DepthMap, RgbImage};
use depthbins::metrics::{mri_theta, MetricRecord, ThetaMetrics};
use depthbins_net::config::RunConfig;
use depthbins_net::eval::{evaluate, EvalReport, Evaluation};
use depthbins_net::model::Model;
use depthbins_net::pipeline::{build_splits, PreparedSample};
use depthbins_net::train::{prepare_all, train, EpochLog, TrainOptions, CHECKPOINT_NAME, LOG_NAME};
use serde::{Deserialize, Serialize};

use crate::figures;
use crate::{CliError, Result, SplitArg};

/// Meters per unit of the 16-bit depth raster.
pub const DEPTH_PNG_SCALE: f64 = 1e-3;

fn user(msg: impl Into<String>) -> CliError {
    CliError::User(msg.into())
}

fn with_seed(mut cfg: RunConfig, seed: Option<u64>) -> RunConfig {
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg
}

// ---------------------------------------------------------------- train

#[derive(Clone, Debug)]
pub struct TrainArgs {
    pub config: PathBuf,
    pub out: PathBuf,
    pub resume: Option<PathBuf>,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub checkpoint: Option<PathBuf>,
    pub log: PathBuf,
    pub logs: Vec<EpochLog>,
}

impl TrainSummary {
    pub fn render(&self) -> String {
        let mut s = String::new();
        if let Some(last) = self.logs.last() {
            let _ = write!(s, "epoch {}: loss {:.6}", last.epoch, last.train.total);
            if let Some(a) = last.val_rd_accuracy {
                let _ = write!(s, ", val rd accuracy {a:.3}");
            }
            s.push('\n');
        } else {
            s.push_str("nothing to train: checkpoint already at the final epoch\n");
        }
        if let Some(c) = &self.checkpoint {
            let _ = write!(s, "checkpoint {}", c.display());
        }
        s
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    RunConfig::load(path).map_err(|e| user(format!("{}: {e}", path.display())))
}

/// Trains `cfg` on its train split, validating on its validation split.
pub fn train_config(cfg: &RunConfig, out: &Path, resume: Option<PathBuf>) -> Result<TrainSummary> {
    fs::create_dir_all(out)?;
    fs::write(out.join("config.toml"), cfg.to_toml()?)?;
    let splits = build_splits(cfg)?;
    let train_set = splits.train.load_all()?;
    let val = prepare_all(&splits.val.load_all()?, cfg)?;
    let outcome = train(
        cfg,
        &train_set,
        &val,
        &TrainOptions {
            out_dir: Some(out.to_path_buf()),
            resume,
        },
    )?;
    Ok(TrainSummary {
        checkpoint: outcome.checkpoint,
        log: out.join(LOG_NAME),
        logs: outcome.logs,
    })
}

pub fn cmd_train(a: &TrainArgs) -> Result<TrainSummary> {
    let cfg = with_seed(load_config(&a.config)?, a.seed);
    train_config(&cfg, &a.out, a.resume.clone())
}

// ---------------------------------------------------------------- eval

#[derive(Clone, Debug)]
pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub config: Option<PathBuf>,
    pub dataset_dir: Option<PathBuf>,
    pub split: SplitArg,
    pub baseline: Option<PathBuf>,
    pub baseline_name: Option<String>,
    pub cap: Option<f64>,
    pub limit: Option<usize>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

/// What `eval` writes as `report.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalFile {
    pub checkpoint: String,
    pub split: String,
    pub report: EvalReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<String>,
    /// Mean relative improvement over the baseline, percent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mri_theta: Option<f64>,
}

pub struct EvalSummary {
    pub file: EvalFile,
    pub evaluation: Evaluation,
}

impl EvalSummary {
    pub fn render(&self) -> String {
        let r = &self.file.report;
        let mut s = format!("images = {}\n{}", r.images, r.overall.to_kv());
        let _ = writeln!(s, "rd_accuracy = {:.6}", r.rd_accuracy);
        if let Some(m) = self.file.mri_theta {
            let _ = writeln!(s, "mri_theta_vs_{} = {m:.4}", self.file.baseline.as_deref().unwrap_or("baseline"));
        }
        for row in &r.per_rd {
            let _ = match &row.metrics {
                Some(m) => writeln!(
                    s,
                    "rd{}: images {} delta1 {:.4} rel {:.4} rmse {:.4}",
                    row.rd, row.images, m.delta1, m.rel, m.rmse
                ),
                None => writeln!(s, "rd{}: images {}", row.rd, row.images),
            };
        }
        s
    }
}

/// Loads a checkpoint, checked against `config` when one is given. The
/// returned run configuration is the config file if present, else the
/// checkpoint's echo.
pub fn load_model(checkpoint: &Path, config: Option<&Path>) -> Result<(Model, RunConfig)> {
    let expected = config.map(load_config).transpose()?;
    let (model, echo) = Model::load(checkpoint, expected.as_ref().map(|c| c.model()).as_ref())?;
    Ok((model, expected.unwrap_or(echo)))
}

/// Prepared samples of one split.
pub fn split_samples(cfg: &RunConfig, split: SplitArg, limit: Option<usize>) -> Result<Vec<PreparedSample>> {
    let splits = build_splits(cfg)?;
    let src = match split {
        SplitArg::Train => splits.train,
        SplitArg::Test => splits.test,
    };
    let n = limit.map_or(src.len(), |l| l.min(src.len()));
    let raw = (0..n).map(|i| src.load(i)).collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(prepare_all(&raw, cfg)?)
}

pub fn read_eval_file(path: &Path) -> Result<EvalFile> {
    let text = fs::read_to_string(path).map_err(|e| user(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| user(format!("{}: {e}", path.display())))
}

pub fn cmd_eval(a: &EvalArgs) -> Result<EvalSummary> {
    let (model, cfg) = load_model(&a.checkpoint, a.config.as_deref())?;
    let mut cfg = with_seed(cfg, a.seed);
    if let Some(d) = &a.dataset_dir {
        cfg.dataset_dir = Some(d.to_string_lossy().into_owned());
    }
    let samples = split_samples(&cfg, a.split, a.limit)?;
    let evaluation = evaluate(&model, &samples, a.cap.or(cfg.eval_cap))?;
    let (baseline, mri) = match &a.baseline {
        Some(p) => {
            let base = read_eval_file(p)?;
            let name = a.baseline_name.clone().unwrap_or_else(|| base.checkpoint.clone());
            let m = mri_theta(
                &ThetaMetrics::from(&evaluation.report.overall),
                &ThetaMetrics::from(&base.report.overall),
            )?;
            (Some(name), Some(m))
        }
        None => (None, None),
    };
    let file = EvalFile {
        checkpoint: a.checkpoint.display().to_string(),
        split: format!("{:?}", a.split).to_lowercase(),
        report: evaluation.report.clone(),
        baseline,
        mri_theta: mri,
    };
    let summary = EvalSummary { file, evaluation };
    if let Some(out) = &a.out {
        write_eval_outputs(out, &summary)?;
    }
    Ok(summary)
}

#[derive(Debug, Serialize, Deserialize)]
struct RdCsvRow {
    rd: usize,
    images: usize,
    n_pixels: usize,
    delta1: Option<f64>,
    delta2: Option<f64>,
    delta3: Option<f64>,
    rel: Option<f64>,
    rmse: Option<f64>,
    log10: Option<f64>,
    mean_peak_bin: Option<f64>,
}

fn write_eval_outputs(out: &Path, s: &EvalSummary) -> Result<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join("metrics.txt"), s.render())?;
    fs::write(out.join("report.json"), serde_json::to_string_pretty(&s.file)?)?;
    let mut w = csv::Writer::from_path(out.join("per_rd.csv"))?;
    for row in &s.file.report.per_rd {
        let m: Option<&MetricRecord> = row.metrics.as_ref();
        w.serialize(RdCsvRow {
            rd: row.rd,
            images: row.images,
            n_pixels: m.map_or(0, |m| m.n_pixels),
            delta1: m.map(|m| m.delta1),
            delta2: m.map(|m| m.delta2),
            delta3: m.map(|m| m.delta3),
            rel: m.map(|m| m.rel),
            rmse: m.map(|m| m.rmse),
            log10: m.map(|m| m.log10),
            mean_peak_bin: row.mean_peak_bin,
        })?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------- predict

#[derive(Clone, Debug)]
pub struct PredictArgs {
    pub checkpoint: PathBuf,
    pub image: PathBuf,
    pub fx: Option<f64>,
    pub fy: Option<f64>,
    pub cx: Option<f64>,
    pub cy: Option<f64>,
    pub out: PathBuf,
    pub preview: Option<PathBuf>,
}

pub struct PredictSummary {
    pub depth: DepthMap,
    pub rd_probs: Vec<f64>,
    pub raster: PathBuf,
    pub preview: PathBuf,
}

impl PredictSummary {
    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, p) in self.rd_probs.iter().enumerate() {
            let _ = writeln!(s, "P(RD{}) = {p:.6}", k + 1);
        }
        let _ = writeln!(s, "depth {} (scale {DEPTH_PNG_SCALE} m)", self.raster.display());
        let _ = writeln!(s, "preview {}", self.preview.display());
        s
    }
}

pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    let img = image::open(path)
        .map_err(|e| user(format!("cannot read image {}: {e}", path.display())))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    Ok(RgbImage::new(w as usize, h as usize, img.into_raw().into_iter().map(f32::from).collect())?)
}

pub fn cmd_predict(a: &PredictArgs) -> Result<PredictSummary> {
    let (Some(fx), Some(fy)) = (a.fx, a.fy) else {
        return Err(user(
            "focal lengths --fx and --fy are required: aligning to the model's field of view \
             sizes the crop as 2*f*tan(fov/2), which depends on both",
        ));
    };
    let (model, cfg) = load_model(&a.checkpoint, None)?;
    let rgb = read_rgb(&a.image)?;
    let intr = CameraIntrinsics::new(
        fx,
        fy,
        a.cx.unwrap_or(rgb.width as f64 / 2.0),
        a.cy.unwrap_or(rgb.height as f64 / 2.0),
        rgb.width,
        rgb.height,
    )?;
    let aligned = align_fov(&rgb, None, &intr, &cfg.fov()?)?;
    let (pred, bundle) = model.predict_with_mirror_bundle(&aligned)?;
    let depth = inverse_align(&pred, &aligned, &intr)?;
    if let Some(dir) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_depth_png(&a.out, &depth)?;
    let preview = a.preview.clone().unwrap_or_else(|| a.out.with_extension("preview.png"));
    write_preview_png(&preview, &depth, cfg.z_max)?;
    Ok(PredictSummary {
        depth,
        rd_probs: bundle.domain_probs.y,
        raster: a.out.clone(),
        preview,
    })
}

/// 16-bit PNG in millimeters; 0 marks invalid pixels.
pub fn write_depth_png(path: &Path, depth: &DepthMap) -> Result<()> {
    let data: Vec<u16> = depth
        .depth
        .iter()
        .zip(&depth.valid)
        .map(|(d, v)| if *v { (*d as f64 / DEPTH_PNG_SCALE).round().clamp(1.0, 65535.0) as u16 } else { 0 })
        .collect();
    let buf = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(depth.width as u32, depth.height as u32, data)
        .ok_or_else(|| CliError::Internal("raster size mismatch".into()))?;
    buf.save(path).map_err(|e| user(format!("{}: {e}", path.display())))
}

pub fn read_depth_png(path: &Path) -> Result<DepthMap> {
    let img = image::open(path)
        .map_err(|e| user(format!("{}: {e}", path.display())))?
        .to_luma16();
    let (w, h) = img.dimensions();
    let raw = img.into_raw();
    let valid: Vec<bool> = raw.iter().map(|v| *v > 0).collect();
    let depth = raw.iter().map(|v| (*v as f64 * DEPTH_PNG_SCALE) as f32).collect();
    Ok(DepthMap::new(w as usize, h as usize, depth, valid)?)
}

// viridis at five stops
const RAMP: [[f64; 3]; 5] = [
    [68.0, 1.0, 84.0],
    [59.0, 82.0, 139.0],
    [33.0, 145.0, 140.0],
    [94.0, 201.0, 98.0],
    [253.0, 231.0, 37.0],
];

/// Maps `t` in [0, 1] to a color; near is bright.
pub fn ramp_color(t: f64) -> [u8; 3] {
    let t = (1.0 - t.clamp(0.0, 1.0)) * (RAMP.len() - 1) as f64;
    let i = (t.floor() as usize).min(RAMP.len() - 2);
    let f = t - i as f64;
    let mut c = [0u8; 3];
    for (j, out) in c.iter_mut().enumerate() {
        *out = (RAMP[i][j] * (1.0 - f) + RAMP[i + 1][j] * f).round() as u8;
    }
    c
}

fn write_preview_png(path: &Path, depth: &DepthMap, z_max: f64) -> Result<()> {
    // log scale spreads desk and street depths alike
    let scale = (1.0 + z_max).ln();
    let mut data = Vec::with_capacity(depth.depth.len() * 3);
    for (d, v) in depth.depth.iter().zip(&depth.valid) {
        let c = if *v { ramp_color((1.0 + *d as f64).ln() / scale) } else { [0, 0, 0] };
        data.extend_from_slice(&c);
    }
    let buf = image::RgbImage::from_raw(depth.width as u32, depth.height as u32, data)
        .ok_or_else(|| CliError::Internal("preview size mismatch".into()))?;
    buf.save(path).map_err(|e| user(format!("{}: {e}", path.display())))
}

// ---------------------------------------------------------------- partition

pub fn parse_strategy(s: &str) -> Result<PartitionStrategy> {
    match s {
        "space_increasing" => Ok(PartitionStrategy::SpaceIncreasing),
        "uniform" => Ok(PartitionStrategy::Uniform),
        other => Err(user(format!("unknown partition strategy {other:?} (space_increasing|uniform)"))),
    }
}

pub fn partition_table(rds: &RangeDomainSet) -> String {
    let mut s = String::from("rd\tinterval\tslab\n");
    for k in 1..=rds.k_count() {
        let (a, b) = rds.interval(k);
        let (lo, hi) = rds.slab(k);
        let _ = writeln!(s, "{k}\t[{a}, {b}]\t({lo}, {hi}]");
    }
    s
}

pub fn cmd_partition(z_min: f64, z_max: f64, k: usize, strategy: &str) -> Result<String> {
    let rds = RangeDomainSet::build(z_min, z_max, k, parse_strategy(strategy)?)?;
    Ok(partition_table(&rds))
}

// ---------------------------------------------------------------- figures

#[derive(Clone, Debug)]
pub struct FiguresArgs {
    pub checkpoint: PathBuf,
    pub width_checkpoint: Option<PathBuf>,
    pub sweep_dir: Option<PathBuf>,
    pub out: PathBuf,
    pub frames: usize,
    pub limit: Option<usize>,
    pub seed: Option<u64>,
}

pub use figures::FiguresSummary;

pub fn cmd_figures(a: &FiguresArgs) -> Result<FiguresSummary> {
    figures::emit_all(a)
}

// ---------------------------------------------------------------- sweep-k

#[derive(Clone, Debug)]
pub struct SweepArgs {
    pub config: PathBuf,
    pub ks: Vec<usize>,
    pub out: PathBuf,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    pub delta1: f64,
    pub rel: f64,
    pub rmse: f64,
    pub rd_accuracy: f64,
}

pub struct SweepSummary {
    pub rows: Vec<SweepRow>,
}

impl SweepSummary {
    pub fn render(&self) -> String {
        let mut s = String::from("k\tdelta1\trel\trmse\trd_accuracy\n");
        for r in &self.rows {
            let _ = writeln!(s, "{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}", r.k, r.delta1, r.rel, r.rmse, r.rd_accuracy);
        }
        s
    }
}

pub const SWEEP_FILE: &str = "sweep.json";

pub fn sweep_checkpoint(dir: &Path, k: usize) -> PathBuf {
    dir.join(format!("k{k}")).join(CHECKPOINT_NAME)
}

pub fn cmd_sweep_k(a: &SweepArgs) -> Result<SweepSummary> {
    if a.ks.is_empty() || a.ks.contains(&0) {
        return Err(user("--ks needs positive domain counts"));
    }
    let base = with_seed(load_config(&a.config)?, a.seed);
    let mut rows = Vec::with_capacity(a.ks.len());
    for &k in &a.ks {
        let cfg = RunConfig { k_domains: k, ..base.clone() };
        cfg.validate()?;
        log::info!("sweep: training K = {k}");
        let dir = a.out.join(format!("k{k}"));
        let summary = train_config(&cfg, &dir, None)?;
        let ckpt = summary.checkpoint.ok_or_else(|| CliError::Internal("training wrote no checkpoint".into()))?;
        let (model, _) = Model::load(&ckpt, Some(&cfg.model()))?;
        let test = split_samples(&cfg, SplitArg::Test, None)?;
        let r = evaluate(&model, &test, cfg.eval_cap)?.report;
        rows.push(SweepRow {
            k,
            delta1: r.overall.delta1,
            rel: r.overall.rel,
            rmse: r.overall.rmse,
            rd_accuracy: r.rd_accuracy,
        });
    }
    fs::write(a.out.join(SWEEP_FILE), serde_json::to_string_pretty(&rows)?)?;
    figures::write_k_sweep_csv(&a.out.join("k_sweep.csv"), &rows)?;
    Ok(SweepSummary { rows })
}
