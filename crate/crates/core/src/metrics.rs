//! Depth accuracy metrics and mean-relative-improvement scores.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{contract, shape, Error, Result};
use crate::maps::DepthMap;

/// Predictions are clamped to this floor before any ratio or log.
pub const PRED_FLOOR: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub rel: f64,
    pub rmse: f64,
    pub log10: f64,
    pub n_pixels: usize,
}

impl MetricRecord {
    /// `(name, value)` pairs in report order.
    pub fn fields(&self) -> [(&'static str, f64); 7] {
        [
            ("delta1", self.delta1),
            ("delta2", self.delta2),
            ("delta3", self.delta3),
            ("rel", self.rel),
            ("rmse", self.rmse),
            ("log10", self.log10),
            ("n_pixels", self.n_pixels as f64),
        ]
    }

    /// Flat `key = value` text form.
    pub fn to_kv(&self) -> String {
        self.fields()
            .iter()
            .map(|(k, v)| if *k == "n_pixels" { format!("{k} = {}\n", *v as usize) } else { format!("{k} = {v:.6}\n") })
            .collect()
    }
}

/// Pixels counted by [`compute_metrics`]: valid ground truth at or below
/// `cap`, and a valid prediction.
pub fn joint_mask(pred: &DepthMap, gt: &DepthMap, cap: f64) -> Vec<bool> {
    gt.valid
        .iter()
        .zip(&gt.depth)
        .zip(&pred.valid)
        .map(|((gv, gd), pv)| *gv && *pv && (*gd as f64) <= cap)
        .collect()
}

pub fn compute_metrics(pred: &DepthMap, gt: &DepthMap, cap: f64) -> Result<MetricRecord> {
    if pred.dims() != gt.dims() {
        return Err(shape(format!("{:?}", gt.dims()), format!("{:?}", pred.dims())));
    }
    let mask = joint_mask(pred, gt, cap);
    let mut n = 0usize;
    let mut hits = [0usize; 3];
    let (mut rel, mut sq, mut lg) = (0.0, 0.0, 0.0);
    for (i, _) in mask.iter().enumerate().filter(|(_, m)| **m) {
        let p = (pred.depth[i] as f64).max(PRED_FLOOR);
        let g = gt.depth[i] as f64;
        let ratio = (p / g).max(g / p);
        for (k, h) in hits.iter_mut().enumerate() {
            if ratio < 1.25f64.powi(k as i32 + 1) {
                *h += 1;
            }
        }
        rel += (p - g).abs() / g;
        sq += (p - g) * (p - g);
        lg += (p.log10() - g.log10()).abs();
        n += 1;
    }
    if n == 0 {
        return Err(Error::NoValidPixels("metrics"));
    }
    let nf = n as f64;
    Ok(MetricRecord {
        delta1: hits[0] as f64 / nf,
        delta2: hits[1] as f64 / nf,
        delta3: hits[2] as f64 / nf,
        rel: rel / nf,
        rmse: (sq / nf).sqrt(),
        log10: lg / nf,
        n_pixels: n,
    })
}

/// Dataset-level aggregate: per-image metrics averaged over images, pixel
/// counts summed.
#[derive(Clone, Debug, Default)]
pub struct MetricMean {
    sum: [f64; 6],
    images: usize,
    pixels: usize,
}

impl MetricMean {
    pub fn push(&mut self, r: &MetricRecord) {
        for (s, (_, v)) in self.sum.iter_mut().zip(r.fields()) {
            *s += v;
        }
        self.images += 1;
        self.pixels += r.n_pixels;
    }

    pub fn images(&self) -> usize {
        self.images
    }

    pub fn finish(&self) -> Option<MetricRecord> {
        if self.images == 0 {
            return None;
        }
        let m = |i: usize| self.sum[i] / self.images as f64;
        Some(MetricRecord {
            delta1: m(0),
            delta2: m(1),
            delta3: m(2),
            rel: m(3),
            rmse: m(4),
            log10: m(5),
            n_pixels: self.pixels,
        })
    }
}

/// The three metrics entering `mRI_θ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaMetrics {
    pub delta1: f64,
    pub rel: f64,
    pub rmse: f64,
}

impl From<&MetricRecord> for ThetaMetrics {
    fn from(r: &MetricRecord) -> Self {
        Self {
            delta1: r.delta1,
            rel: r.rel,
            rmse: r.rmse,
        }
    }
}

/// Mean relative improvement over (δ₁, REL, RMSE), in percent. Positive
/// means the candidate is better: higher δ₁, lower REL and RMSE.
pub fn mri_theta(candidate: &ThetaMetrics, baseline: &ThetaMetrics) -> Result<f64> {
    if baseline.delta1 == 0.0 || baseline.rel == 0.0 || baseline.rmse == 0.0 {
        return Err(contract("mRI baseline entries must be nonzero"));
    }
    let terms = [
        (candidate.delta1 - baseline.delta1) / baseline.delta1,
        (baseline.rel - candidate.rel) / baseline.rel,
        (baseline.rmse - candidate.rmse) / baseline.rmse,
    ];
    Ok(terms.iter().sum::<f64>() / 3.0 * 100.0)
}

/// Mean relative RMSE reduction across datasets, in percent.
pub fn mri_eta(candidate_rmse: &[f64], baseline_rmse: &[f64]) -> Result<f64> {
    if candidate_rmse.len() != baseline_rmse.len() || candidate_rmse.is_empty() {
        return Err(shape(
            format!("{} datasets", baseline_rmse.len()),
            format!("{} datasets", candidate_rmse.len()),
        ));
    }
    if baseline_rmse.iter().chain(candidate_rmse).any(|v| *v == 0.0) {
        return Err(contract("mRI entries must be nonzero"));
    }
    let sum: f64 = candidate_rmse
        .iter()
        .zip(baseline_rmse)
        .map(|(c, b)| (b - c) / b)
        .sum();
    Ok(sum / candidate_rmse.len() as f64 * 100.0)
}

/// One frame of a per-frame RMSE series. `rmse` is `None` when the frame
/// had no evaluable pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub frame_index: usize,
    pub rmse: Option<f64>,
    pub indoor_flag: bool,
}

pub fn write_series_csv<W: Write>(points: &[SeriesPoint], out: W) -> Result<()> {
    if points.windows(2).any(|w| w[0].frame_index >= w[1].frame_index) {
        return Err(contract("series frames must be strictly ordered"));
    }
    let mut w = csv::Writer::from_writer(out);
    for p in points {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_series_csv<R: Read>(input: R) -> Result<Vec<SeriesPoint>> {
    let mut r = csv::Reader::from_reader(input);
    let points = r.deserialize().collect::<std::result::Result<Vec<SeriesPoint>, _>>()?;
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(v: &[f32]) -> DepthMap {
        DepthMap::from_depths(v.len(), 1, v.to_vec()).unwrap()
    }

    #[test]
    fn identity_is_perfect() {
        let d = map(&[1.0, 2.0, 3.0]);
        let r = compute_metrics(&d, &d, 80.0).unwrap();
        assert_eq!((r.delta1, r.delta2, r.delta3), (1.0, 1.0, 1.0));
        assert_eq!((r.rel, r.rmse, r.log10), (0.0, 0.0, 0.0));
    }

    #[test]
    fn hand_example() {
        let r = compute_metrics(&map(&[1.0, 2.0, 4.0]), &map(&[1.0, 2.0, 2.0]), 80.0).unwrap();
        assert!((r.delta1 - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.rel - 1.0 / 3.0).abs() < 1e-12);
        assert!((r.rmse - 2.0 / 3f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn delta_threshold_is_strict() {
        let r = compute_metrics(&map(&[1.25, 2.5]), &map(&[1.0, 2.0]), 80.0).unwrap();
        assert_eq!(r.delta1, 0.0);
        assert_eq!(r.delta2, 1.0);
    }

    #[test]
    fn cap_and_validity_shrink_the_mask() {
        let pred = DepthMap::from_depths(3, 1, vec![1.0, 0.0, 5.0]).unwrap();
        let gt = map(&[1.0, 2.0, 90.0]);
        assert_eq!(compute_metrics(&pred, &gt, 80.0).unwrap().n_pixels, 1);
        assert!(compute_metrics(&pred, &map(&[90.0, 90.0, 90.0]), 80.0).is_err());
    }

    #[test]
    fn mri_table_values() {
        let base = ThetaMetrics { delta1: 0.844, rel: 0.147, rmse: 0.341 };
        let a = ThetaMetrics { delta1: 0.850, rel: 0.125, rmse: 0.357 };
        let b = ThetaMetrics { delta1: 0.897, rel: 0.107, rmse: 0.272 };
        assert!((mri_theta(&a, &base).unwrap() - 3.66).abs() < 0.01);
        assert!((mri_theta(&b, &base).unwrap() - 17.90).abs() < 0.01);
        assert_eq!(mri_theta(&base, &base).unwrap(), 0.0);

        let base = [0.695, 2.695, 6.107, 6.767];
        assert!((mri_eta(&[0.673, 2.373, 5.605, 5.390], &base).unwrap() - 10.92).abs() < 0.01);
        assert!((mri_eta(&[0.692, 2.504, 6.033, 5.726], &base).unwrap() - 6.03).abs() < 0.01);
        assert!(mri_eta(&[1.0], &base).is_err());
    }

    #[test]
    fn series_csv_round_trip() {
        let pts = vec![
            SeriesPoint { frame_index: 0, rmse: Some(0.25), indoor_flag: true },
            SeriesPoint { frame_index: 1, rmse: None, indoor_flag: false },
            SeriesPoint { frame_index: 3, rmse: Some(1.0 / 3.0), indoor_flag: false },
        ];
        let mut buf = Vec::new();
        write_series_csv(&pts, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("frame_index,rmse,indoor_flag\n"));
        assert_eq!(read_series_csv(buf.as_slice()).unwrap(), pts);
    }

    #[test]
    fn mean_sums_pixels() {
        let mut m = MetricMean::default();
        let d = map(&[1.0, 2.0]);
        m.push(&compute_metrics(&d, &d, 80.0).unwrap());
        m.push(&compute_metrics(&map(&[2.0]), &map(&[1.0]), 80.0).unwrap());
        let r = m.finish().unwrap();
        assert_eq!(r.n_pixels, 3);
        assert_eq!(r.delta1, 0.5);
    }
}
