//! On-disk layout: `rgb/<id>.png`, `depth/<id>.png` (16-bit, `value *
//! depth_scale` meters, 0 = invalid) and `intrinsics/<id>.json`.

use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma};
use serde::{Deserialize, Serialize};

use super::{DepthSample, SampleMeta};
use crate::error::{Error, Result};
use crate::fov::CameraIntrinsics;
use crate::maps::{DepthMap, RgbImage};

/// Millimeter depth units.
pub const DEFAULT_DEPTH_SCALE: f64 = 1e-3;

/// Per-frame JSON sidecar. A missing principal point defaults to the image
/// center.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub fx: f64,
    pub fy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cx: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cy: Option<f64>,
    pub depth_scale: f64,
    pub max_range: f64,
    #[serde(default)]
    pub indoor_flag: bool,
}

fn require(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::MissingFile(path.to_path_buf()))
    }
}

fn unreadable(path: &Path, reason: impl ToString) -> Error {
    Error::UnreadableRaster {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

pub fn load_rgbd_sample(image_path: &Path, depth_path: &Path, intrinsics_path: &Path) -> Result<DepthSample> {
    require(image_path)?;
    require(depth_path)?;
    require(intrinsics_path)?;

    let rgb = image::open(image_path).map_err(|e| unreadable(image_path, e))?.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let rgb = RgbImage::new(w, h, rgb.into_raw().into_iter().map(f32::from).collect())?;

    let raw = image::open(depth_path).map_err(|e| unreadable(depth_path, e))?;
    if !matches!(raw.color(), image::ColorType::L16 | image::ColorType::L8) {
        return Err(unreadable(depth_path, format!("expected a single-channel raster, got {:?}", raw.color())));
    }
    let raw = raw.to_luma16();
    let (dw, dh) = (raw.width() as usize, raw.height() as usize);
    if (dw, dh) != (w, h) {
        return Err(Error::Registration {
            rgb: (w, h),
            depth: (dw, dh),
        });
    }

    let text = fs::read_to_string(intrinsics_path)?;
    let side: Sidecar = serde_json::from_str(&text).map_err(|e| Error::Intrinsics {
        path: intrinsics_path.to_path_buf(),
        reason: e.to_string(),
    })?;
    if !(side.depth_scale > 0.0 && side.max_range > 0.0) {
        return Err(Error::Intrinsics {
            path: intrinsics_path.to_path_buf(),
            reason: "depth_scale and max_range must be positive".into(),
        });
    }
    let intrinsics = CameraIntrinsics::new(
        side.fx,
        side.fy,
        side.cx.unwrap_or(w as f64 / 2.0),
        side.cy.unwrap_or(h as f64 / 2.0),
        w,
        h,
    )
    .map_err(|e| Error::Intrinsics {
        path: intrinsics_path.to_path_buf(),
        reason: e.to_string(),
    })?;

    let depth = raw.into_raw().into_iter().map(|v| (v as f64 * side.depth_scale) as f32).collect();
    let depth = DepthMap::from_depths(w, h, depth)?.with_cap(side.max_range as f32);
    let frame_id = image_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let dataset_id = image_path
        .parent()
        .and_then(Path::parent)
        .and_then(Path::file_name)
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(DepthSample {
        rgb,
        depth,
        intrinsics,
        meta: SampleMeta {
            dataset_id,
            frame_id,
            indoor_flag: side.indoor_flag,
            max_range: side.max_range,
        },
    })
}

/// Paths of frame `id` under a dataset root.
pub fn frame_paths(root: &Path, id: &str) -> (PathBuf, PathBuf, PathBuf) {
    (
        root.join("rgb").join(format!("{id}.png")),
        root.join("depth").join(format!("{id}.png")),
        root.join("intrinsics").join(format!("{id}.json")),
    )
}

/// Writes a sample in the dataset layout. Depths are quantized to
/// `depth_scale`; invalid pixels become 0.
pub fn save_rgbd_sample(root: &Path, id: &str, sample: &DepthSample, depth_scale: f64) -> Result<()> {
    let (rgb_path, depth_path, side_path) = frame_paths(root, id);
    for p in [&rgb_path, &depth_path, &side_path] {
        fs::create_dir_all(p.parent().expect("frame paths have parents"))?;
    }
    let (w, h) = (sample.rgb.width as u32, sample.rgb.height as u32);
    image::RgbImage::from_raw(w, h, sample.rgb.to_rgb8())
        .expect("buffer sized from the image")
        .save(&rgb_path)
        .map_err(|e| unreadable(&rgb_path, e))?;
    let units: Vec<u16> = sample
        .depth
        .depth
        .iter()
        .zip(&sample.depth.valid)
        .map(|(d, v)| if *v { (*d as f64 / depth_scale).round().clamp(1.0, 65535.0) as u16 } else { 0 })
        .collect();
    ImageBuffer::<Luma<u16>, _>::from_raw(w, h, units)
        .expect("buffer sized from the image")
        .save(&depth_path)
        .map_err(|e| unreadable(&depth_path, e))?;
    let i = &sample.intrinsics;
    let side = Sidecar {
        fx: i.fx,
        fy: i.fy,
        cx: Some(i.cx),
        cy: Some(i.cy),
        depth_scale,
        max_range: sample.meta.max_range,
        indoor_flag: sample.meta.indoor_flag,
    };
    fs::write(&side_path, serde_json::to_string_pretty(&side)?)?;
    Ok(())
}

/// Sorted frame ids that have an RGB image under `root/rgb`.
pub fn list_dataset(root: &Path) -> Result<Vec<String>> {
    let dir = root.join("rgb");
    if !dir.is_dir() {
        return Err(Error::MissingFile(dir));
    }
    let mut ids: Vec<String> = fs::read_dir(&dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "png"))
        .filter_map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .collect();
    ids.sort();
    Ok(ids)
}
