//! Evaluation protocol: align, mirror-average, map back to the source
//! frame, score. Also collects the bin-usage diagnostics.

use std::collections::BTreeMap;

use depthbins::bins::{peak_bin_index, DepthBuckets, OccupancyAccumulator, OccupancyHistogram};
use depthbins::fov::inverse_align;
use depthbins::metrics::{compute_metrics, MetricMean, MetricRecord, SeriesPoint};
use depthbins::stats::spearman;
use serde::{Deserialize, Serialize};

use crate::error::{NetError, Result};
use crate::model::{Model, PredictionBundle};
use crate::pipeline::PreparedSample;

/// Depth buckets of the occupancy statistics.
pub const OCCUPANCY_BUCKETS: usize = 40;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleEval {
    pub index: usize,
    pub frame_id: String,
    pub dataset_id: String,
    pub indoor_flag: bool,
    pub label: usize,
    pub predicted_label: usize,
    pub domain_probs: Vec<f64>,
    /// 0-based.
    pub peak_bin: usize,
    pub fused_centers: Vec<f64>,
    /// `None` when no pixel survived the joint mask.
    pub metrics: Option<MetricRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RdRow {
    /// 1-based range domain (true label).
    pub rd: usize,
    pub images: usize,
    pub metrics: Option<MetricRecord>,
    pub mean_peak_bin: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub images: usize,
    pub overall: MetricRecord,
    pub per_rd: Vec<RdRow>,
    pub per_dataset: BTreeMap<String, MetricRecord>,
    pub rd_accuracy: f64,
    /// Spearman correlation of bin index against the occupancy-weighted
    /// mean depth of each used bin.
    pub occupancy_spearman: Option<f64>,
}

pub struct Evaluation {
    pub report: EvalReport,
    pub samples: Vec<SampleEval>,
    pub occupancy: OccupancyHistogram,
    pub bin_mean_depths: Vec<Option<f64>>,
}

fn cap_for(sample: &PreparedSample, cap: Option<f64>) -> f64 {
    cap.unwrap_or(sample.meta.max_range)
}

/// Mirror-averaged prediction mapped back to the source frame.
pub fn predict_source(model: &Model, sample: &PreparedSample) -> Result<(depthbins::maps::DepthMap, PredictionBundle)> {
    let (pred, bundle) = model.predict_with_mirror_bundle(&sample.aligned)?;
    Ok((inverse_align(&pred, &sample.aligned, &sample.intrinsics)?, bundle))
}

pub fn evaluate(model: &Model, samples: &[PreparedSample], cap: Option<f64>) -> Result<Evaluation> {
    let cfg = model.config();
    let k = cfg.k_domains;
    let buckets = DepthBuckets {
        count: OCCUPANCY_BUCKETS,
        max_depth: cfg.z_max,
    };
    let mut occ = OccupancyAccumulator::new(cfg.n_bins, buckets)?;
    let mut overall = MetricMean::default();
    let mut per_rd = vec![MetricMean::default(); k];
    let mut rd_images = vec![0usize; k];
    let mut peaks = vec![Vec::new(); k];
    let mut per_dataset: BTreeMap<String, MetricMean> = BTreeMap::new();
    let mut correct = 0;
    let mut evals = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let (pred, bundle) = predict_source(model, s)?;
        let metrics = match compute_metrics(&pred, &s.source_depth, cap_for(s, cap)) {
            Ok(r) => Some(r),
            Err(depthbins::Error::NoValidPixels(_)) => None,
            Err(e) => return Err(e.into()),
        };
        let gt = s.aligned.depth.as_ref().ok_or_else(|| NetError::Config("evaluation sample without depth".into()))?;
        let p = &bundle.final_probs;
        occ.add(p, &gt.resize_nearest(p.width, p.height))?;
        let predicted = bundle.domain_probs.argmax();
        correct += usize::from(predicted == s.label);
        let peak = peak_bin_index(&bundle.fused_centers);
        let r = s.label - 1;
        rd_images[r] += 1;
        peaks[r].push(peak as f64);
        if let Some(m) = &metrics {
            overall.push(m);
            per_rd[r].push(m);
            per_dataset.entry(s.meta.dataset_id.clone()).or_default().push(m);
        }
        evals.push(SampleEval {
            index: i,
            frame_id: s.meta.frame_id.clone(),
            dataset_id: s.meta.dataset_id.clone(),
            indoor_flag: s.meta.indoor_flag,
            label: s.label,
            predicted_label: predicted,
            domain_probs: bundle.domain_probs.y.clone(),
            peak_bin: peak,
            fused_centers: bundle.fused_centers.centers.clone(),
            metrics,
        });
    }
    let overall = overall
        .finish()
        .ok_or_else(|| NetError::Config("no evaluable sample".into()))?;
    let bin_mean_depths = occ.bin_mean_depths();
    let (idx, depth): (Vec<f64>, Vec<f64>) = bin_mean_depths
        .iter()
        .enumerate()
        .filter_map(|(i, d)| d.map(|d| (i as f64, d)))
        .unzip();
    let report = EvalReport {
        images: samples.len(),
        overall,
        per_rd: (0..k)
            .map(|r| RdRow {
                rd: r + 1,
                images: rd_images[r],
                metrics: per_rd[r].finish(),
                mean_peak_bin: (!peaks[r].is_empty()).then(|| peaks[r].iter().sum::<f64>() / peaks[r].len() as f64),
            })
            .collect(),
        per_dataset: per_dataset
            .into_iter()
            .filter_map(|(k, m)| m.finish().map(|r| (k, r)))
            .collect(),
        rd_accuracy: correct as f64 / samples.len().max(1) as f64,
        occupancy_spearman: spearman(&idx, &depth),
    };
    Ok(Evaluation {
        report,
        samples: evals,
        occupancy: occ.histogram(),
        bin_mean_depths,
    })
}

/// One RMSE per frame, in order; frames without valid pixels are missing.
pub fn per_frame_series(model: &Model, frames: &[PreparedSample], cap: Option<f64>) -> Result<Vec<SeriesPoint>> {
    frames
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let (pred, _) = predict_source(model, s)?;
            let rmse = match compute_metrics(&pred, &s.source_depth, cap_for(s, cap)) {
                Ok(r) => Some(r.rmse),
                Err(depthbins::Error::NoValidPixels(_)) => None,
                Err(e) => return Err(e.into()),
            };
            Ok(SeriesPoint {
                frame_index: i,
                rmse,
                indoor_flag: s.meta.indoor_flag,
            })
        })
        .collect()
}
