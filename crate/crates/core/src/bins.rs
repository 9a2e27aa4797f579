//! Bin arithmetic: width-based bins, variation-based unnormalized bins,
//! probability-weighted depth synthesis, the bi-directional Chamfer bin loss
//! and the bin-usage diagnostics.
//!
//! Bin indices are 0-based throughout.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, shape, Error, Result};
use crate::maps::DepthMap;

/// Smoothing constant shared by width normalization and variation centers.
pub const BIN_EPSILON: f64 = 1e-3;

/// Default cap on ground-truth points entering the Chamfer loss per image.
pub const CHAMFER_SUBSAMPLE_CAP: usize = 10_000;

/// Unnormalized widths and their ε-smoothed normalization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinWidthVector {
    pub raw_widths: Vec<f64>,
    pub normalized: Vec<f64>,
}

/// Per-bin depth variations in meters; any sign.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinVariationVector {
    pub variations: Vec<f64>,
}

impl BinVariationVector {
    pub fn new(variations: Vec<f64>) -> Result<Self> {
        if variations.iter().any(|v| !v.is_finite()) {
            return Err(contract("bin variations must be finite"));
        }
        Ok(Self { variations })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinKind {
    WidthBased,
    VariationBased,
    Fused,
}

/// Metric bin centers in meters.
///
/// Width-based centers are strictly increasing inside `(d_min, d_max)`.
/// Variation-based and fused centers may be non-monotone and may go
/// negative.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinCenterVector {
    pub centers: Vec<f64>,
    pub kind: BinKind,
}

impl BinCenterVector {
    pub fn new(centers: Vec<f64>, kind: BinKind) -> Self {
        Self { centers, kind }
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.centers.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.centers.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Per-pixel distributions over `n_bins`, stored pixel-major `(H, W, N)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityVolume {
    pub height: usize,
    pub width: usize,
    pub n_bins: usize,
    pub probs: Vec<f32>,
}

impl ProbabilityVolume {
    pub fn new(height: usize, width: usize, n_bins: usize, probs: Vec<f32>) -> Result<Self> {
        if probs.len() != height * width * n_bins {
            return Err(shape(
                format!("{height}x{width}x{n_bins}"),
                format!("{} values", probs.len()),
            ));
        }
        Ok(Self {
            height,
            width,
            n_bins,
            probs,
        })
    }

    #[inline]
    pub fn pixel(&self, index: usize) -> &[f32] {
        &self.probs[index * self.n_bins..(index + 1) * self.n_bins]
    }

    /// Checks every pixel is a distribution within `tol`.
    pub fn is_normalized(&self, tol: f64) -> bool {
        (0..self.height * self.width).all(|i| {
            let p = self.pixel(i);
            p.iter().all(|v| *v >= 0.0) && (p.iter().map(|v| *v as f64).sum::<f64>() - 1.0).abs() <= tol
        })
    }
}

/// `b_n = (b'_n + ε) / Σ_i (b'_i + ε)`.
pub fn normalize_widths(raw: &[f64], epsilon: f64) -> Result<BinWidthVector> {
    if raw.is_empty() {
        return Err(contract("width vector is empty"));
    }
    if !(epsilon > 0.0) {
        return Err(contract("epsilon must be positive"));
    }
    if let Some(bad) = raw.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
        return Err(contract(format!("raw width {bad} is negative or non-finite")));
    }
    let total: f64 = raw.iter().map(|w| w + epsilon).sum();
    Ok(BinWidthVector {
        raw_widths: raw.to_vec(),
        normalized: raw.iter().map(|w| (w + epsilon) / total).collect(),
    })
}

/// Centers from accumulated normalized widths over `[d_min, d_max]`:
/// `c_n = d_min + (d_max - d_min)(b_n / 2 + Σ_{j<n} b_j)`.
pub fn width_bin_centers(b: &BinWidthVector, d_min: f64, d_max: f64) -> Result<BinCenterVector> {
    if !(d_max > d_min) {
        return Err(contract(format!("d_max ({d_max}) must exceed d_min ({d_min})")));
    }
    let span = d_max - d_min;
    let mut acc = 0.0;
    let centers = b
        .normalized
        .iter()
        .map(|w| {
            let c = d_min + span * (acc + w / 2.0);
            acc += w;
            c
        })
        .collect();
    Ok(BinCenterVector::new(centers, BinKind::WidthBased))
}

/// Unnormalized centers `ĉ_n = ε + v_n / 2 + Σ_{j<n} v_j`.
pub fn variation_bin_centers(v: &BinVariationVector, epsilon: f64) -> Result<BinCenterVector> {
    if v.variations.iter().any(|x| !x.is_finite()) {
        return Err(contract("bin variations must be finite"));
    }
    let mut acc = 0.0;
    let centers = v
        .variations
        .iter()
        .map(|x| {
            let c = epsilon + acc + x / 2.0;
            acc += x;
            c
        })
        .collect();
    Ok(BinCenterVector::new(centers, BinKind::VariationBased))
}

/// Vector-Jacobian product of [`variation_bin_centers`]: maps `∂L/∂ĉ` to
/// `∂L/∂v` using `∂ĉ_n/∂v_j = 1 (j<n), 1/2 (j=n), 0 (j>n)`.
pub fn variation_centers_vjp(upstream: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; upstream.len()];
    let mut tail = 0.0;
    for j in (0..upstream.len()).rev() {
        out[j] = 0.5 * upstream[j] + tail;
        tail += upstream[j];
    }
    out
}

/// Dense Jacobian `J[n][j] = ∂ĉ_n / ∂v_j` of the variation centers.
pub fn variation_centers_jacobian(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|row| {
            (0..n)
                .map(|col| match col.cmp(&row) {
                    std::cmp::Ordering::Less => 1.0,
                    std::cmp::Ordering::Equal => 0.5,
                    std::cmp::Ordering::Greater => 0.0,
                })
                .collect()
        })
        .collect()
}

/// `D(i) = Σ_n c_n P_n(i)`. The output is marked valid everywhere.
pub fn combine_depth(p: &ProbabilityVolume, c: &BinCenterVector) -> Result<DepthMap> {
    if p.n_bins != c.len() {
        return Err(shape(format!("{} bins", c.len()), format!("{} channels", p.n_bins)));
    }
    let depth = (0..p.height * p.width)
        .map(|i| {
            p.pixel(i)
                .iter()
                .zip(&c.centers)
                .map(|(w, c)| *w as f64 * c)
                .sum::<f64>() as f32
        })
        .collect();
    DepthMap::new(p.width, p.height, depth, vec![true; p.width * p.height])
}

/// Seeded uniform subsample without replacement; returns the input when it
/// already fits under `cap`.
pub fn subsample_depths(depths: &[f64], cap: usize, seed: u64) -> Vec<f64> {
    if depths.len() <= cap {
        return depths.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = sample(&mut rng, depths.len(), cap).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| depths[i]).collect()
}

/// Bi-directional Chamfer loss between centers and ground-truth depths:
/// `Σ_d min_n (d - c_n)² + Σ_n min_d (d - c_n)²`, after capping the depth
/// set at `subsample_cap` points with a seeded sampler.
pub fn chamfer_bin_loss(
    c: &BinCenterVector,
    gt_depths: &[f64],
    subsample_cap: usize,
    seed: u64,
) -> Result<f64> {
    let depths = subsample_depths(gt_depths, subsample_cap, seed);
    chamfer_with_grad(&c.centers, &depths).map(|(loss, _)| loss)
}

/// Chamfer loss and its gradient with respect to the centers.
///
/// Nearest neighbours are found by binary search over sorted copies of both
/// sets. Equidistant candidates resolve to the smallest center index.
pub fn chamfer_with_grad(centers: &[f64], depths: &[f64]) -> Result<(f64, Vec<f64>)> {
    let p = chamfer_parts(centers, depths)?;
    let grad = p.grad_depth_term.iter().zip(&p.grad_center_term).map(|(a, b)| a + b).collect();
    Ok((p.depth_term + p.center_term, grad))
}

/// The two directions of the Chamfer loss kept apart, so callers can
/// normalize each by its own point count.
#[derive(Clone, Debug, PartialEq)]
pub struct ChamferParts {
    /// `Σ_d min_n (d - c_n)²`
    pub depth_term: f64,
    /// `Σ_n min_d (d - c_n)²`
    pub center_term: f64,
    pub grad_depth_term: Vec<f64>,
    pub grad_center_term: Vec<f64>,
}

pub fn chamfer_parts(centers: &[f64], depths: &[f64]) -> Result<ChamferParts> {
    if depths.is_empty() {
        return Err(Error::NoValidPixels("chamfer loss needs ground-truth depths"));
    }
    if centers.is_empty() {
        return Err(contract("chamfer loss needs at least one center"));
    }
    if centers.iter().chain(depths).any(|v| !v.is_finite()) {
        return Err(contract("chamfer inputs must be finite"));
    }

    // Distinct center values, each carrying the smallest index holding it.
    let mut order: Vec<usize> = (0..centers.len()).collect();
    order.sort_by(|a, b| centers[*a].total_cmp(&centers[*b]).then(a.cmp(b)));
    let mut uniq: Vec<(f64, usize)> = Vec::with_capacity(centers.len());
    for &i in &order {
        match uniq.last_mut() {
            Some((v, idx)) if *v == centers[i] => *idx = (*idx).min(i),
            _ => uniq.push((centers[i], i)),
        }
    }

    let mut grad_d = vec![0.0; centers.len()];
    let mut loss_d = 0.0;
    for &d in depths {
        let pos = uniq.partition_point(|(v, _)| *v < d);
        let mut best: Option<(f64, usize)> = None;
        for cand in [pos.checked_sub(1), Some(pos)].into_iter().flatten() {
            if let Some(&(v, idx)) = uniq.get(cand) {
                let dist = (d - v) * (d - v);
                best = match best {
                    Some((bd, bi)) if bd < dist || (bd == dist && bi < idx) => Some((bd, bi)),
                    _ => Some((dist, idx)),
                };
            }
        }
        let (dist, idx) = best.expect("non-empty centers");
        loss_d += dist;
        grad_d[idx] += 2.0 * (centers[idx] - d);
    }

    let mut sorted = depths.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut grad_c = vec![0.0; centers.len()];
    let mut loss_c = 0.0;
    for (n, &c) in centers.iter().enumerate() {
        let pos = sorted.partition_point(|v| *v < c);
        let nearest = [pos.checked_sub(1), Some(pos)]
            .into_iter()
            .flatten()
            .filter_map(|i| sorted.get(i))
            .min_by(|a, b| (c - **a).abs().total_cmp(&(c - **b).abs()))
            .copied()
            .expect("non-empty depths");
        loss_c += (c - nearest) * (c - nearest);
        grad_c[n] = 2.0 * (c - nearest);
    }
    Ok(ChamferParts {
        depth_term: loss_d,
        center_term: loss_c,
        grad_depth_term: grad_d,
        grad_center_term: grad_c,
    })
}

/// Smallest index attaining the maximum center: the bin where the center
/// curve peaks.
pub fn peak_bin_index(c: &BinCenterVector) -> usize {
    let mut best = 0;
    for (i, v) in c.centers.iter().enumerate() {
        if *v > c.centers[best] {
            best = i;
        }
    }
    best
}

/// Uniform depth bucketing over `[0, max_depth]` for occupancy statistics;
/// depths beyond the range land in the last bucket.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthBuckets {
    pub count: usize,
    pub max_depth: f64,
}

impl DepthBuckets {
    pub fn bucket(&self, depth: f64) -> usize {
        let b = (depth / self.max_depth * self.count as f64).floor();
        (b.max(0.0) as usize).min(self.count - 1)
    }

    pub fn bucket_center(&self, bucket: usize) -> f64 {
        (bucket as f64 + 0.5) * self.max_depth / self.count as f64
    }
}

/// Row-normalized `(buckets × N)` frequency of depth values per bin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccupancyHistogram {
    pub buckets: DepthBuckets,
    pub n_bins: usize,
    /// Row-major `buckets.count × n_bins`.
    pub freq: Vec<f64>,
}

impl OccupancyHistogram {
    pub fn row(&self, bucket: usize) -> &[f64] {
        &self.freq[bucket * self.n_bins..(bucket + 1) * self.n_bins]
    }

    pub fn at(&self, bucket: usize, bin: usize) -> f64 {
        self.freq[bucket * self.n_bins + bin]
    }
}

/// Accumulates per-pixel bin probability mass against ground-truth depth
/// over any number of images.
#[derive(Clone, Debug)]
pub struct OccupancyAccumulator {
    buckets: DepthBuckets,
    n_bins: usize,
    mass: Vec<f64>,
    depth_mass: Vec<f64>,
    prob_mass: Vec<f64>,
    pixels: usize,
}

impl OccupancyAccumulator {
    pub fn new(n_bins: usize, buckets: DepthBuckets) -> Result<Self> {
        if n_bins == 0 || buckets.count == 0 || !(buckets.max_depth > 0.0) {
            return Err(contract("occupancy needs bins, buckets and a positive depth range"));
        }
        Ok(Self {
            buckets,
            n_bins,
            mass: vec![0.0; buckets.count * n_bins],
            depth_mass: vec![0.0; n_bins],
            prob_mass: vec![0.0; n_bins],
            pixels: 0,
        })
    }

    pub fn add(&mut self, p: &ProbabilityVolume, gt: &DepthMap) -> Result<()> {
        if p.n_bins != self.n_bins {
            return Err(shape(format!("{} bins", self.n_bins), format!("{} channels", p.n_bins)));
        }
        if (p.width, p.height) != (gt.width, gt.height) {
            return Err(shape(
                format!("{}x{}", p.width, p.height),
                format!("{}x{}", gt.width, gt.height),
            ));
        }
        for i in 0..gt.depth.len() {
            if !gt.valid[i] {
                continue;
            }
            let d = gt.depth[i] as f64;
            let row = self.buckets.bucket(d) * self.n_bins;
            for (n, w) in p.pixel(i).iter().enumerate() {
                let w = *w as f64;
                self.mass[row + n] += w;
                self.depth_mass[n] += w * d;
                self.prob_mass[n] += w;
            }
            self.pixels += 1;
        }
        Ok(())
    }

    pub fn pixels(&self) -> usize {
        self.pixels
    }

    /// Rows normalized to sum to one; rows without mass stay zero.
    pub fn histogram(&self) -> OccupancyHistogram {
        let mut freq = self.mass.clone();
        for row in freq.chunks_mut(self.n_bins) {
            let total: f64 = row.iter().sum();
            if total > 0.0 {
                row.iter_mut().for_each(|v| *v /= total);
            }
        }
        OccupancyHistogram {
            buckets: self.buckets,
            n_bins: self.n_bins,
            freq,
        }
    }

    /// Probability-weighted mean ground-truth depth per bin; `None` for bins
    /// that never received mass.
    pub fn bin_mean_depths(&self) -> Vec<Option<f64>> {
        self.depth_mass
            .iter()
            .zip(&self.prob_mass)
            .map(|(dm, pm)| (*pm > 1e-12).then(|| dm / pm))
            .collect()
    }
}

/// Frequency of ground-truth depth buckets per bin for a single image.
pub fn bin_occupancy_histogram(
    c: &BinCenterVector,
    p: &ProbabilityVolume,
    gt: &DepthMap,
    buckets: DepthBuckets,
) -> Result<OccupancyHistogram> {
    if c.len() != p.n_bins {
        return Err(shape(format!("{} bins", c.len()), format!("{} channels", p.n_bins)));
    }
    if gt.valid_count() == 0 {
        return Err(Error::NoValidPixels("occupancy histogram"));
    }
    let mut acc = OccupancyAccumulator::new(c.len(), buckets)?;
    acc.add(p, gt)?;
    Ok(acc.histogram())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn normalize_examples() {
        let b = normalize_widths(&[1.0; 4], 1e-3).unwrap();
        assert!(close(&b.normalized, &[0.25; 4], 1e-12));
        let b = normalize_widths(&[0.0, 0.0], 1e-3).unwrap();
        assert!(close(&b.normalized, &[0.5, 0.5], 1e-12));
        let b = normalize_widths(&[3.0, 1.0], 1e-3).unwrap();
        assert!(close(&b.normalized, &[3.001 / 4.002, 1.001 / 4.002], 1e-12));
        assert!((b.normalized[0] - 0.74988).abs() < 1e-5);
    }

    #[test]
    fn normalize_rejects_bad_input() {
        assert!(matches!(normalize_widths(&[], 1e-3), Err(Error::Contract(_))));
        assert!(matches!(normalize_widths(&[1.0, -0.5], 1e-3), Err(Error::Contract(_))));
        assert!(normalize_widths(&[1.0], 0.0).is_err());
    }

    #[test]
    fn width_center_examples() {
        let quarter = normalize_widths(&[1.0; 4], 1e-3).unwrap();
        let c = width_bin_centers(&quarter, 0.0, 8.0).unwrap();
        assert!(close(&c.centers, &[1.0, 3.0, 5.0, 7.0], 1e-9));
        let one = BinWidthVector {
            raw_widths: vec![1.0],
            normalized: vec![1.0],
        };
        assert!(close(&width_bin_centers(&one, 0.0, 10.0).unwrap().centers, &[5.0], 1e-12));
        let half = BinWidthVector {
            raw_widths: vec![1.0, 1.0],
            normalized: vec![0.5, 0.5],
        };
        assert!(close(&width_bin_centers(&half, 2.0, 4.0).unwrap().centers, &[2.5, 3.5], 1e-12));
        assert!(width_bin_centers(&half, 4.0, 4.0).is_err());
    }

    #[test]
    fn variation_center_examples() {
        let c = |v: &[f64]| {
            variation_bin_centers(&BinVariationVector::new(v.to_vec()).unwrap(), 1e-3)
                .unwrap()
                .centers
        };
        assert!(close(&c(&[0.0, 0.0, 0.0]), &[0.001; 3], 1e-12));
        assert!(close(&c(&[2.0, 2.0, -1.0]), &[1.001, 3.001, 3.501], 1e-12));
        assert!(close(&c(&[2.0, -2.0]), &[1.001, 1.001], 1e-12));
        // negative centers are permitted
        assert!(c(&[-4.0, 1.0])[0] < 0.0);
        assert!(BinVariationVector::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn jacobian_is_lower_triangular_with_half_diagonal() {
        let j = variation_centers_jacobian(4);
        for (n, row) in j.iter().enumerate() {
            for (k, v) in row.iter().enumerate() {
                let want = if k < n { 1.0 } else if k == n { 0.5 } else { 0.0 };
                assert_eq!(*v, want);
            }
        }
        // vjp agrees with J^T u
        let u = [0.3, -1.2, 2.0, 0.7];
        let vjp = variation_centers_vjp(&u);
        for k in 0..4 {
            let dense: f64 = (0..4).map(|n| j[n][k] * u[n]).sum();
            assert!((dense - vjp[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn combine_depth_examples() {
        let c = BinCenterVector::new(vec![1.0, 3.0, 5.0, 7.0], BinKind::WidthBased);
        let onehot = ProbabilityVolume::new(1, 1, 4, vec![0.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(combine_depth(&onehot, &c).unwrap().depth, vec![5.0]);
        let uniform = ProbabilityVolume::new(2, 2, 4, vec![0.25; 16]).unwrap();
        assert!(combine_depth(&uniform, &c).unwrap().depth.iter().all(|d| (*d - 4.0).abs() < 1e-6));
        let half = ProbabilityVolume::new(1, 1, 2, vec![0.5, 0.5]).unwrap();
        let c2 = BinCenterVector::new(vec![2.0, 6.0], BinKind::WidthBased);
        assert_eq!(combine_depth(&half, &c2).unwrap().depth, vec![4.0]);
        assert!(combine_depth(&half, &c).is_err());
    }

    #[test]
    fn chamfer_examples() {
        let c = |v: &[f64], d: &[f64]| {
            chamfer_bin_loss(&BinCenterVector::new(v.to_vec(), BinKind::Fused), d, 10_000, 0).unwrap()
        };
        assert_eq!(c(&[1.0, 3.0], &[1.0, 3.0]), 0.0);
        assert!((c(&[1.0], &[2.0]) - 2.0).abs() < 1e-12);
        assert!((c(&[1.0, 3.0], &[2.0]) - 3.0).abs() < 1e-12);
        assert!(matches!(
            chamfer_bin_loss(&BinCenterVector::new(vec![1.0], BinKind::Fused), &[], 10, 0),
            Err(Error::NoValidPixels(_))
        ));
    }

    #[test]
    fn chamfer_tie_goes_to_smallest_index() {
        // d=2 is equidistant from centers 1 and 3.
        let (_, g) = chamfer_with_grad(&[3.0, 1.0], &[2.0]).unwrap();
        // index 0 (value 3) wins the tie for the depth→center term
        assert_eq!(g[0], 2.0 * (3.0 - 2.0) + 2.0 * (3.0 - 2.0));
        assert_eq!(g[1], 2.0 * (1.0 - 2.0));
    }

    #[test]
    fn subsample_is_seeded_and_capped() {
        let d: Vec<f64> = (0..100).map(f64::from).collect();
        let a = subsample_depths(&d, 10, 7);
        assert_eq!(a.len(), 10);
        assert_eq!(a, subsample_depths(&d, 10, 7));
        assert_eq!(subsample_depths(&d, 200, 7), d);
    }

    #[test]
    fn peak_examples() {
        let p = |v: &[f64]| peak_bin_index(&BinCenterVector::new(v.to_vec(), BinKind::VariationBased));
        assert_eq!(p(&[1.001, 3.001, 3.501]), 2);
        assert_eq!(p(&[1.0, 2.0, 3.0, 4.0]), 3);
        assert_eq!(p(&[1.001, 1.001]), 0);
    }

    #[test]
    fn occupancy_examples() {
        let buckets = DepthBuckets {
            count: 4,
            max_depth: 8.0,
        };
        let c = BinCenterVector::new(vec![1.0, 2.0, 3.0, 4.0], BinKind::WidthBased);
        let p = ProbabilityVolume::new(1, 1, 4, vec![0.0, 0.0, 1.0, 0.0]).unwrap();
        let gt = DepthMap::from_depths(1, 1, vec![0.5]).unwrap();
        let h = bin_occupancy_histogram(&c, &p, &gt, buckets).unwrap();
        assert_eq!(h.at(0, 2), 1.0);
        assert_eq!(h.freq.iter().sum::<f64>(), 1.0);

        let p = ProbabilityVolume::new(1, 2, 4, vec![0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let gt = DepthMap::from_depths(2, 1, vec![0.5, 1.0]).unwrap();
        let h = bin_occupancy_histogram(&c, &p, &gt, buckets).unwrap();
        assert_eq!(h.row(0), &[0.0, 0.5, 0.0, 0.5]);

        let p = ProbabilityVolume::new(1, 3, 4, vec![0.25; 12]).unwrap();
        let gt = DepthMap::from_depths(3, 1, vec![0.5, 3.0, 7.5]).unwrap();
        let h = bin_occupancy_histogram(&c, &p, &gt, buckets).unwrap();
        for b in 0..4 {
            let row = h.row(b);
            let s: f64 = row.iter().sum();
            assert!(s == 0.0 || row.iter().all(|v| (*v - 0.25).abs() < 1e-12));
        }

        let none = DepthMap::invalid(1, 1);
        assert!(bin_occupancy_histogram(&c, &ProbabilityVolume::new(1, 1, 4, vec![0.25; 4]).unwrap(), &none, buckets).is_err());
    }
}
