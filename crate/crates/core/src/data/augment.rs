use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DepthSample;

/// Photometric and mirror augmentation. No geometric scaling or cropping:
/// either would change metric depth or the effective FOV.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub flip_prob: f64,
    /// Relative brightness jitter, e.g. 0.1 for ±10%.
    pub brightness: f64,
    pub contrast: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            flip_prob: 0.5,
            brightness: 0.1,
            contrast: 0.1,
        }
    }
}

pub fn augment(sample: &DepthSample, seed: u64, cfg: &AugmentConfig) -> DepthSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let flip = rng.random_bool(cfg.flip_prob.clamp(0.0, 1.0));
    let gain = 1.0 + rng.random_range(-cfg.brightness..=cfg.brightness) as f32;
    let contrast = 1.0 + rng.random_range(-cfg.contrast..=cfg.contrast) as f32;

    let mut out = sample.clone();
    if flip {
        out.rgb = out.rgb.hflip();
        out.depth = out.depth.hflip();
        out.intrinsics.cx = out.intrinsics.width as f64 - out.intrinsics.cx;
    }
    let mean = out.rgb.data.iter().sum::<f32>() / out.rgb.data.len().max(1) as f32;
    for v in &mut out.rgb.data {
        *v = ((*v - mean) * contrast + mean) * gain;
        *v = v.clamp(0.0, 255.0);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_scene, RdChoice, SynthConfig};
    use crate::domains::partition_range;

    fn sample() -> DepthSample {
        let cfg = SynthConfig::new(partition_range(0.0, 80.0, 4).unwrap());
        synth_scene(&cfg.with_seed(3, RdChoice::Index(2))).unwrap()
    }

    #[test]
    fn photometric_jitter_leaves_depth_alone() {
        let s = sample();
        let no_flip = AugmentConfig { flip_prob: 0.0, ..Default::default() };
        let a = augment(&s, 11, &no_flip);
        assert_eq!(a.depth, s.depth);
        assert_ne!(a.rgb, s.rgb);
    }

    #[test]
    fn reproducible_and_flip_is_involution() {
        let s = sample();
        let cfg = AugmentConfig::default();
        assert_eq!(augment(&s, 5, &cfg), augment(&s, 5, &cfg));
        let flip_only = AugmentConfig { flip_prob: 1.0, brightness: 0.0, contrast: 0.0 };
        let twice = augment(&augment(&s, 1, &flip_only), 2, &flip_only);
        assert_eq!(twice.depth, s.depth);
        assert_eq!(twice.intrinsics, s.intrinsics);
        for (a, b) in twice.rgb.data.iter().zip(&s.rgb.data) {
            assert!((a - b).abs() < 1e-3);
        }
    }
}
