//! Range domains: the space-increasing partition of the global depth range,
//! ground-truth domain labels, and probability-weighted bin fusion.
//!
//! Domains are numbered `1..=K` (`RD_1` is the shortest range).

use serde::{Deserialize, Serialize};

use crate::bins::{BinCenterVector, BinKind};
use crate::error::{contract, shape, Error, Result};
use crate::maps::DepthMap;

/// Percentile of valid depths used to label an image's range domain.
pub const DEFAULT_LABEL_PERCENTILE: f64 = 0.99;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionStrategy {
    SpaceIncreasing,
    Uniform,
}

/// `K` nested intervals `RD_k = [z_min, uppers[k-1]]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RangeDomainSet {
    pub z_min: f64,
    pub z_max: f64,
    pub uppers: Vec<f64>,
}

impl RangeDomainSet {
    pub fn k_count(&self) -> usize {
        self.uppers.len()
    }

    /// Closed interval of domain `k` (1-based), anchored at `z_min`.
    pub fn interval(&self, k: usize) -> (f64, f64) {
        (self.z_min, self.uppers[k - 1])
    }

    /// Disjoint slab `(uppers[k-2], uppers[k-1]]` owned by domain `k`; the
    /// first slab starts at `z_min`.
    pub fn slab(&self, k: usize) -> (f64, f64) {
        let lo = if k == 1 { self.z_min } else { self.uppers[k - 2] };
        (lo, self.uppers[k - 1])
    }

    /// Smallest domain whose upper bound reaches `depth`; depths beyond
    /// `z_max` clamp to `K`.
    pub fn domain_of(&self, depth: f64) -> usize {
        self.uppers
            .iter()
            .position(|u| *u >= depth)
            .map_or(self.k_count(), |i| i + 1)
    }

    pub fn build(z_min: f64, z_max: f64, k_count: usize, strategy: PartitionStrategy) -> Result<Self> {
        match strategy {
            PartitionStrategy::SpaceIncreasing => partition_range(z_min, z_max, k_count),
            PartitionStrategy::Uniform => uniform_partition(z_min, z_max, k_count),
        }
    }
}

fn check_range(z_min: f64, z_max: f64, k_count: usize) -> Result<()> {
    if k_count == 0 {
        return Err(contract("need at least one range domain"));
    }
    if !(z_max > z_min) || !z_min.is_finite() || !z_max.is_finite() {
        return Err(contract(format!("invalid depth range [{z_min}, {z_max}]")));
    }
    Ok(())
}

/// Space-increasing partition: the `i`-th increment is
/// `2i (z_max - z_min) / (K (1 + K))`, so near domains are narrow.
pub fn partition_range(z_min: f64, z_max: f64, k_count: usize) -> Result<RangeDomainSet> {
    check_range(z_min, z_max, k_count)?;
    let k = k_count as f64;
    let span = z_max - z_min;
    let mut acc = 0.0;
    let mut uppers: Vec<f64> = (1..=k_count)
        .map(|i| {
            acc += 2.0 * i as f64 * span / (k * (1.0 + k));
            z_min + acc
        })
        .collect();
    // the increments sum to the span analytically; pin the float endpoint
    *uppers.last_mut().expect("k >= 1") = z_max;
    Ok(RangeDomainSet { z_min, z_max, uppers })
}

/// Equal-width comparator partition, `uppers[k] = z_min + k (z_max - z_min) / K`.
pub fn uniform_partition(z_min: f64, z_max: f64, k_count: usize) -> Result<RangeDomainSet> {
    check_range(z_min, z_max, k_count)?;
    let span = z_max - z_min;
    let uppers = (1..=k_count)
        .map(|i| {
            if i == k_count {
                z_max
            } else {
                z_min + i as f64 * span / k_count as f64
            }
        })
        .collect();
    Ok(RangeDomainSet { z_min, z_max, uppers })
}

/// Label of an image: the smallest domain whose upper bound is at least the
/// given percentile of valid depths (nearest-rank percentile).
pub fn rd_label(gt: &DepthMap, rds: &RangeDomainSet, percentile: f64) -> Result<usize> {
    if !(percentile > 0.0 && percentile <= 1.0) {
        return Err(contract(format!("percentile {percentile} outside (0, 1]")));
    }
    let mut depths = gt.valid_depths();
    if depths.is_empty() {
        return Err(Error::NoValidPixels("range-domain label"));
    }
    depths.sort_by(f64::total_cmp);
    let rank = ((percentile * depths.len() as f64).ceil() as usize).clamp(1, depths.len());
    Ok(rds.domain_of(depths[rank - 1]))
}

/// Per-image simplex over the `K` domains.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainProbability {
    pub y: Vec<f64>,
}

impl DomainProbability {
    pub fn new(y: Vec<f64>) -> Result<Self> {
        let p = Self { y };
        if !p.is_simplex(1e-5) {
            return Err(contract("domain probabilities must be a simplex"));
        }
        Ok(p)
    }

    pub fn is_simplex(&self, tol: f64) -> bool {
        !self.y.is_empty()
            && self.y.iter().all(|v| (-tol..=1.0 + tol).contains(v))
            && (self.y.iter().sum::<f64>() - 1.0).abs() <= tol
    }

    /// 1-based most probable domain (smallest index on ties).
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.y.iter().enumerate() {
            if *v > self.y[best] {
                best = i;
            }
        }
        best + 1
    }
}

/// One center vector per range domain, all of the same length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinBank {
    pub per_domain_centers: Vec<BinCenterVector>,
}

impl BinBank {
    pub fn new(per_domain_centers: Vec<BinCenterVector>) -> Result<Self> {
        let Some(first) = per_domain_centers.first() else {
            return Err(contract("bin bank is empty"));
        };
        let n = first.len();
        if let Some(bad) = per_domain_centers.iter().find(|c| c.len() != n) {
            return Err(shape(format!("{n} bins"), format!("{} bins", bad.len())));
        }
        Ok(Self { per_domain_centers })
    }

    pub fn k_count(&self) -> usize {
        self.per_domain_centers.len()
    }

    pub fn n_bins(&self) -> usize {
        self.per_domain_centers[0].len()
    }
}

/// `c = Σ_k ĉ^[k] y_k`, elementwise.
pub fn fuse_bins(bank: &BinBank, y: &DomainProbability) -> Result<BinCenterVector> {
    if bank.k_count() != y.y.len() {
        return Err(shape(format!("{} domains", bank.k_count()), format!("{} probabilities", y.y.len())));
    }
    let mut fused = vec![0.0; bank.n_bins()];
    for (centers, w) in bank.per_domain_centers.iter().zip(&y.y) {
        for (f, c) in fused.iter_mut().zip(&centers.centers) {
            *f += c * w;
        }
    }
    Ok(BinCenterVector::new(fused, BinKind::Fused))
}

/// Gradients of a scalar loss through [`fuse_bins`], given `∂L/∂c`:
/// returns `(∂L/∂ĉ^[k] per domain, ∂L/∂y)`.
pub fn fuse_bins_vjp(bank: &BinBank, y: &DomainProbability, upstream: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let d_bank = y
        .y
        .iter()
        .map(|w| upstream.iter().map(|g| g * w).collect())
        .collect();
    let d_y = bank
        .per_domain_centers
        .iter()
        .map(|c| c.centers.iter().zip(upstream).map(|(a, g)| a * g).sum())
        .collect();
    (d_bank, d_y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partition_examples() {
        assert_eq!(partition_range(0.0, 80.0, 4).unwrap().uppers, vec![8.0, 24.0, 48.0, 80.0]);
        let p = partition_range(1.0, 13.0, 3).unwrap();
        assert_eq!(p.uppers, vec![3.0, 7.0, 13.0]);
        assert_eq!(partition_range(0.0, 5.5, 1).unwrap().uppers, vec![5.5]);
        assert!(partition_range(0.0, 80.0, 0).is_err());
        assert!(partition_range(3.0, 3.0, 2).is_err());
    }

    #[test]
    fn uniform_examples() {
        assert_eq!(uniform_partition(0.0, 80.0, 4).unwrap().uppers, vec![20.0, 40.0, 60.0, 80.0]);
        assert_eq!(uniform_partition(0.0, 80.0, 1).unwrap().uppers, vec![80.0]);
        assert_eq!(uniform_partition(2.0, 10.0, 2).unwrap().uppers, vec![6.0, 10.0]);
        assert!(uniform_partition(1.0, 0.0, 2).is_err());
    }

    #[test]
    fn label_examples() {
        let rds = partition_range(0.0, 80.0, 4).unwrap();
        let near = DepthMap::from_depths(3, 1, vec![1.0, 7.9, 8.0]).unwrap();
        assert_eq!(rd_label(&near, &rds, 0.99).unwrap(), 1);
        let mid = DepthMap::from_depths(3, 1, vec![1.0, 30.0, 47.9]).unwrap();
        assert_eq!(rd_label(&mid, &rds, 1.0).unwrap(), 3);
        let far = DepthMap::from_depths(2, 1, vec![85.0, 120.0]).unwrap();
        assert_eq!(rd_label(&far, &rds, 0.99).unwrap(), 4);
        assert!(matches!(rd_label(&DepthMap::invalid(2, 2), &rds, 0.99), Err(Error::NoValidPixels(_))));
        assert!(rd_label(&near, &rds, 0.0).is_err());
    }

    #[test]
    fn fuse_examples() {
        let bank = BinBank::new(vec![
            BinCenterVector::new(vec![1.0, 2.0], BinKind::VariationBased),
            BinCenterVector::new(vec![3.0, 6.0], BinKind::VariationBased),
        ])
        .unwrap();
        let half = DomainProbability::new(vec![0.5, 0.5]).unwrap();
        assert_eq!(fuse_bins(&bank, &half).unwrap().centers, vec![2.0, 4.0]);
        let onehot = DomainProbability::new(vec![0.0, 1.0]).unwrap();
        assert_eq!(fuse_bins(&bank, &onehot).unwrap().centers, vec![3.0, 6.0]);
        let same = BinBank::new(vec![bank.per_domain_centers[0].clone(); 3]).unwrap();
        let y = DomainProbability::new(vec![0.2, 0.3, 0.5]).unwrap();
        let fused = fuse_bins(&same, &y).unwrap();
        assert!(fused.centers.iter().zip([1.0, 2.0]).all(|(a, b)| (a - b).abs() < 1e-12));
        assert_eq!(fused.kind, BinKind::Fused);
        assert!(fuse_bins(&bank, &y).is_err());
    }

    #[test]
    fn bank_rejects_ragged_vectors() {
        let r = BinBank::new(vec![
            BinCenterVector::new(vec![1.0], BinKind::Fused),
            BinCenterVector::new(vec![1.0, 2.0], BinKind::Fused),
        ]);
        assert!(r.is_err());
    }
}
