//! RGB-D samples: on-disk loading, the procedural scene generator, seeded
//! augmentation and dataset splits.

mod augment;
mod dataset;
mod loader;
mod synth;

use serde::{Deserialize, Serialize};

use crate::fov::CameraIntrinsics;
use crate::maps::{DepthMap, RgbImage};

pub use augment::{augment, AugmentConfig};
pub use dataset::{make_dataset, make_split, split_is_test, SynthDataset, SynthEntry};
pub use loader::{frame_paths, list_dataset, load_rgbd_sample, save_rgbd_sample, Sidecar, DEFAULT_DEPTH_SCALE};
pub use synth::{synth_scene, RdChoice, SynthConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub dataset_id: String,
    pub frame_id: String,
    pub indoor_flag: bool,
    pub max_range: f64,
}

/// A registered RGB-D pair with its camera.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthSample {
    pub rgb: RgbImage,
    pub depth: DepthMap,
    pub intrinsics: CameraIntrinsics,
    pub meta: SampleMeta,
}

/// splitmix64 finalizer, used for seed derivation and split hashing.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}
