//! Seeded synthetic datasets with a hash-based 90/10 split.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::synth::{synth_scene, RdChoice, SynthConfig};
use super::{splitmix64, DepthSample};
use crate::error::{contract, Result};

const SPLIT_SALT: u64 = 0x005E_ED5A_170F_7E57;

/// One reproducible scene: generator seed plus its range domain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SynthEntry {
    pub seed: u64,
    pub rd_index: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthDataset {
    pub template: SynthConfig,
    pub train: Vec<SynthEntry>,
    pub test: Vec<SynthEntry>,
}

impl SynthDataset {
    pub fn generate(&self, entry: &SynthEntry) -> Result<DepthSample> {
        synth_scene(&self.template.with_seed(entry.seed, RdChoice::Index(entry.rd_index)))
    }
}

/// Test membership of a scene seed (about 10% of seeds).
pub fn split_is_test(seed: u64) -> bool {
    splitmix64(seed ^ SPLIT_SALT).is_multiple_of(10)
}

fn seed_stream(base: u64) -> impl Iterator<Item = u64> {
    (0u64..).map(move |i| splitmix64(base.wrapping_mul(0x2545_F491_4F6C_DD1D) ^ i))
}

fn check_mix(mix: &[f64], k_count: usize) -> Result<()> {
    if mix.len() != k_count {
        return Err(contract(format!("rd_mix has {} entries, expected {k_count}", mix.len())));
    }
    if mix.iter().any(|p| !p.is_finite() || *p < 0.0) || (mix.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
        return Err(contract("rd_mix must be a simplex"));
    }
    Ok(())
}

/// `count` domain labels in proportion to `mix` (largest remainder), then
/// shuffled.
fn quota(count: usize, mix: &[f64], seed: u64) -> Vec<usize> {
    let exact: Vec<f64> = mix.iter().map(|p| p * count as f64).collect();
    let mut n: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..mix.len()).collect();
    order.sort_by(|a, b| (exact[*b] - n[*b] as f64).total_cmp(&(exact[*a] - n[*a] as f64)));
    let short = count - n.iter().sum::<usize>();
    for &k in order.iter().take(short) {
        n[k] += 1;
    }
    let mut labels: Vec<usize> = n.iter().enumerate().flat_map(|(k, c)| std::iter::repeat_n(k + 1, *c)).collect();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    labels
}

/// `count` scenes with per-domain proportions from `rd_mix`, split 90/10
/// by seed hash.
pub fn make_dataset(template: &SynthConfig, count: usize, rd_mix: &[f64]) -> Result<SynthDataset> {
    if count == 0 {
        return Err(contract("dataset count must be at least 1"));
    }
    check_mix(rd_mix, template.range_set.k_count())?;
    let labels = quota(count, rd_mix, template.seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (seed, rd_index) in seed_stream(template.seed).zip(labels) {
        let e = SynthEntry { seed, rd_index };
        if split_is_test(seed) {
            test.push(e);
        } else {
            train.push(e);
        }
    }
    Ok(SynthDataset {
        template: template.clone(),
        train,
        test,
    })
}

/// Exactly `n_train` / `n_test` scenes, each split balanced to `rd_mix`.
/// Membership still follows [`split_is_test`], so the seed sets are
/// disjoint.
pub fn make_split(template: &SynthConfig, n_train: usize, n_test: usize, rd_mix: &[f64]) -> Result<SynthDataset> {
    check_mix(rd_mix, template.range_set.k_count())?;
    let pick = |test: bool, n: usize, salt: u64| -> Vec<SynthEntry> {
        seed_stream(template.seed)
            .filter(|s| split_is_test(*s) == test)
            .zip(quota(n, rd_mix, template.seed ^ salt))
            .map(|(seed, rd_index)| SynthEntry { seed, rd_index })
            .collect()
    };
    Ok(SynthDataset {
        template: template.clone(),
        train: pick(false, n_train, 1),
        test: pick(true, n_test, 2),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domains::partition_range;
    use std::collections::HashSet;

    fn template() -> SynthConfig {
        SynthConfig::new(partition_range(0.0, 80.0, 4).unwrap())
    }

    #[test]
    fn proportions_follow_the_mix() {
        let d = make_dataset(&template(), 4000, &[0.25; 4]).unwrap();
        let mut counts = [0usize; 4];
        for e in d.train.iter().chain(&d.test) {
            counts[e.rd_index - 1] += 1;
        }
        assert_eq!(counts, [1000; 4]);
        let frac = d.test.len() as f64 / 4000.0;
        assert!((frac - 0.1).abs() < 0.02, "{frac}");
    }

    #[test]
    fn splits_are_deterministic_and_disjoint() {
        let a = make_split(&template(), 200, 20, &[0.25; 4]).unwrap();
        assert_eq!(a, make_split(&template(), 200, 20, &[0.25; 4]).unwrap());
        assert_eq!((a.train.len(), a.test.len()), (200, 20));
        let train: HashSet<u64> = a.train.iter().map(|e| e.seed).collect();
        assert!(a.test.iter().all(|e| !train.contains(&e.seed)));
    }

    #[test]
    fn degenerate_mix_is_rejected() {
        assert!(make_dataset(&template(), 10, &[0.5, 0.5]).is_err());
        assert!(make_dataset(&template(), 10, &[0.5, 0.5, 0.5, -0.5]).is_err());
        assert!(make_dataset(&template(), 10, &[0.1; 4]).is_err());
        assert!(make_dataset(&template(), 0, &[0.25; 4]).is_err());
    }
}
