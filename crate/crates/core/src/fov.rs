//! Field-of-view alignment.
//!
//! Every input is cropped to the source region that covers a fixed target
//! FOV (`w' = 2 fx tan(ωx/2)`, `h' = 2 fy tan(ωy/2)`), centered on the
//! principal point. Pixels of that region falling outside the source are
//! filled with 255 and flagged as padding, then the region is resized to
//! the network resolution: bilinear for color, nearest for depth and the
//! padding mask. [`inverse_align`] maps a network-resolution prediction
//! back onto the source grid so metrics are computed within the same FOV.

use serde::{Deserialize, Serialize};

use crate::error::{contract, shape, Error, Result};
use crate::maps::{nearest_indices, DepthMap, RgbImage};

pub const PAD_VALUE: f32 = 255.0;

/// Pinhole intrinsics in pixels. `(cx, cy)` use continuous coordinates, so
/// the exact image center is `(width / 2, height / 2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) || !fx.is_finite() || !fy.is_finite() {
            return Err(contract(format!("focal lengths must be positive, got ({fx}, {fy})")));
        }
        if width == 0 || height == 0 {
            return Err(contract("image dimensions must be at least 1"));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// Principal point at the image center.
    pub fn centered(fx: f64, fy: f64, width: usize, height: usize) -> Result<Self> {
        Self::new(fx, fy, width as f64 / 2.0, height as f64 / 2.0, width, height)
    }

    /// Horizontal and vertical field of view in radians.
    pub fn fov(&self) -> (f64, f64) {
        (
            2.0 * (self.width as f64 / (2.0 * self.fx)).atan(),
            2.0 * (self.height as f64 / (2.0 * self.fy)).atan(),
        )
    }
}

/// Target field of view (radians) and network input resolution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FovSpec {
    pub omega_x: f64,
    pub omega_y: f64,
    pub target_w: usize,
    pub target_h: usize,
}

impl FovSpec {
    pub fn new(omega_x: f64, omega_y: f64, target_w: usize, target_h: usize) -> Result<Self> {
        let ok = |w: f64| w > 0.0 && w < std::f64::consts::PI;
        if !ok(omega_x) || !ok(omega_y) {
            return Err(contract(format!("FOV ({omega_x}, {omega_y}) rad outside (0, π)")));
        }
        if target_w == 0 || target_h == 0 {
            return Err(contract("target resolution must be at least 1x1"));
        }
        Ok(Self {
            omega_x,
            omega_y,
            target_w,
            target_h,
        })
    }

    pub fn from_degrees(fov_x: f64, fov_y: f64, target_w: usize, target_h: usize) -> Result<Self> {
        Self::new(fov_x.to_radians(), fov_y.to_radians(), target_w, target_h)
    }
}

/// Size of the source region matching the target FOV.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropSize {
    pub width: usize,
    pub height: usize,
    /// Set when either side rounded below one pixel and was floored to 1.
    pub degenerate: bool,
}

pub fn target_crop_size(intr: &CameraIntrinsics, fov: &FovSpec) -> CropSize {
    let w = 2.0 * intr.fx * (fov.omega_x / 2.0).tan();
    let h = 2.0 * intr.fy * (fov.omega_y / 2.0).tan();
    let (w, h) = (w.round(), h.round());
    CropSize {
        width: w.max(1.0) as usize,
        height: h.max(1.0) as usize,
        degenerate: w < 1.0 || h < 1.0,
    }
}

/// Source-pixel rectangle; the origin may be negative when the crop
/// extends past the image.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropRect {
    pub x0: i64,
    pub y0: i64,
    pub width: usize,
    pub height: usize,
}

impl CropRect {
    pub fn centered_on(cx: f64, cy: f64, size: CropSize) -> Self {
        Self {
            x0: (cx - size.width as f64 / 2.0).round() as i64,
            y0: (cy - size.height as f64 / 2.0).round() as i64,
            width: size.width,
            height: size.height,
        }
    }

    pub fn center(&self) -> (f64, f64) {
        (
            self.x0 as f64 + self.width as f64 / 2.0,
            self.y0 as f64 + self.height as f64 / 2.0,
        )
    }

    /// Source pixel for crop-local `(i, j)`, if inside a `width × height` image.
    #[inline]
    fn source(&self, i: usize, j: usize, width: usize, height: usize) -> Option<(usize, usize)> {
        let x = self.x0 + i as i64;
        let y = self.y0 + j as i64;
        (x >= 0 && y >= 0 && (x as usize) < width && (y as usize) < height).then_some((x as usize, y as usize))
    }
}

/// A network-ready input plus what is needed to undo the alignment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignedSample {
    pub image: RgbImage,
    pub depth: Option<DepthMap>,
    /// True where the pixel came from outside the source image.
    pub pad_mask: Vec<bool>,
    pub crop_rect: CropRect,
    /// `(w / w', h / h')`.
    pub scale: (f64, f64),
    pub source_size: (usize, usize),
}

impl AlignedSample {
    pub fn width(&self) -> usize {
        self.image.width
    }

    pub fn height(&self) -> usize {
        self.image.height
    }

    /// Mirror image; crop geometry is left untouched so callers must flip
    /// predictions back before [`inverse_align`].
    pub fn hflip(&self) -> Self {
        let w = self.image.width;
        let mut pad_mask = self.pad_mask.clone();
        for row in pad_mask.chunks_mut(w) {
            row.reverse();
        }
        Self {
            image: self.image.hflip(),
            depth: self.depth.as_ref().map(DepthMap::hflip),
            pad_mask,
            ..self.clone()
        }
    }
}

pub fn align_fov(
    image: &RgbImage,
    depth: Option<&DepthMap>,
    intr: &CameraIntrinsics,
    fov: &FovSpec,
) -> Result<AlignedSample> {
    if (image.width, image.height) != (intr.width, intr.height) {
        return Err(shape(
            format!("{}x{} (intrinsics)", intr.width, intr.height),
            format!("{}x{} (image)", image.width, image.height),
        ));
    }
    if let Some(d) = depth {
        if d.dims() != (image.width, image.height) {
            return Err(Error::Registration {
                rgb: (image.width, image.height),
                depth: d.dims(),
            });
        }
    }
    let size = target_crop_size(intr, fov);
    if size.degenerate {
        return Err(Error::Degenerate(format!(
            "crop of {}x{} px for fx={}, fy={}",
            size.width, size.height, intr.fx, intr.fy
        )));
    }
    let rect = CropRect::centered_on(intr.cx, intr.cy, size);
    let (cw, ch) = (rect.width, rect.height);

    let mut crop = RgbImage::filled(cw, ch, PAD_VALUE);
    let mut crop_pad = vec![true; cw * ch];
    let mut crop_depth = depth.map(|_| DepthMap::invalid(cw, ch));
    for j in 0..ch {
        for i in 0..cw {
            let Some((x, y)) = rect.source(i, j, image.width, image.height) else {
                continue;
            };
            crop.set_pixel(i, j, image.pixel(x, y));
            crop_pad[j * cw + i] = false;
            if let (Some(cd), Some(d)) = (crop_depth.as_mut(), depth) {
                let (dst, src) = (j * cw + i, d.index(x, y));
                cd.depth[dst] = d.depth[src];
                cd.valid[dst] = d.valid[src];
            }
        }
    }

    let (tw, th) = (fov.target_w, fov.target_h);
    let mut out_image = crop.resize_bilinear(tw, th);
    let xs = nearest_indices(cw, tw);
    let ys = nearest_indices(ch, th);
    let mut pad_mask = Vec::with_capacity(tw * th);
    for &sy in &ys {
        for &sx in &xs {
            pad_mask.push(crop_pad[sy * cw + sx]);
        }
    }
    for (idx, pad) in pad_mask.iter().enumerate() {
        if *pad {
            out_image.set_pixel(idx % tw, idx / tw, [PAD_VALUE; 3]);
        }
    }
    let out_depth = crop_depth.map(|cd| {
        let mut d = cd.resize_nearest(tw, th);
        for (v, pad) in d.valid.iter_mut().zip(&pad_mask) {
            *v &= !pad;
        }
        d
    });

    Ok(AlignedSample {
        image: out_image,
        depth: out_depth,
        pad_mask,
        crop_rect: rect,
        scale: (tw as f64 / cw as f64, th as f64 / ch as f64),
        source_size: (image.width, image.height),
    })
}

/// Resamples a network-resolution prediction back to the crop size
/// (nearest) and places it on the source grid. Pixels outside the crop,
/// or whose nearest aligned pixel was padding, are invalid.
pub fn inverse_align(pred: &DepthMap, sample: &AlignedSample, intr: &CameraIntrinsics) -> Result<DepthMap> {
    if pred.dims() != (sample.width(), sample.height()) {
        return Err(shape(
            format!("{}x{}", sample.width(), sample.height()),
            format!("{}x{}", pred.width, pred.height),
        ));
    }
    if sample.source_size != (intr.width, intr.height) {
        return Err(Error::Degenerate(format!(
            "sample was aligned from {:?} but intrinsics describe {}x{}",
            sample.source_size, intr.width, intr.height
        )));
    }
    let rect = sample.crop_rect;
    let xs = nearest_indices(pred.width, rect.width);
    let ys = nearest_indices(pred.height, rect.height);
    let mut out = DepthMap::invalid(intr.width, intr.height);
    for (j, &py) in ys.iter().enumerate() {
        for (i, &px) in xs.iter().enumerate() {
            let Some((x, y)) = rect.source(i, j, intr.width, intr.height) else {
                continue;
            };
            let src = pred.index(px, py);
            if sample.pad_mask[src] {
                continue;
            }
            let dst = out.index(x, y);
            out.depth[dst] = pred.depth[src];
            out.valid[dst] = pred.valid[src];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn deg(fx: f64, fy: f64) -> FovSpec {
        FovSpec::from_degrees(fx, fy, 64, 48).unwrap()
    }

    #[test]
    fn crop_size_examples() {
        let intr = CameraIntrinsics::centered(1091.517, 1091.517, 1920, 1080).unwrap();
        let s = target_crop_size(&intr, &deg(58.0, 45.0));
        assert!((s.width as i64 - 1210).abs() <= 1 && (s.height as i64 - 904).abs() <= 1);
        let intr = CameraIntrinsics::centered(100.0, 100.0, 200, 200).unwrap();
        assert_eq!(target_crop_size(&intr, &deg(60.0, 60.0)).width, 115);
        let tiny = FovSpec::new(1e-6, 1e-6, 8, 8).unwrap();
        let s = target_crop_size(&intr, &tiny);
        assert_eq!((s.width, s.height, s.degenerate), (1, 1, true));
    }

    #[test]
    fn degenerate_crop_is_an_error() {
        let intr = CameraIntrinsics::centered(100.0, 100.0, 8, 8).unwrap();
        let img = RgbImage::filled(8, 8, 10.0);
        let tiny = FovSpec::new(1e-6, 1e-6, 8, 8).unwrap();
        assert!(matches!(align_fov(&img, None, &intr, &tiny), Err(Error::Degenerate(_))));
    }

    #[test]
    fn vga_crop_is_centered_without_padding() {
        let intr = CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap();
        let img = RgbImage::filled(640, 480, 10.0);
        let a = align_fov(&img, None, &intr, &deg(58.0, 45.0)).unwrap();
        assert_eq!((a.crop_rect.width, a.crop_rect.height), (554, 414));
        let (cx, cy) = a.crop_rect.center();
        assert!((cx - 320.0).abs() <= 1.0 && (cy - 240.0).abs() <= 1.0);
        assert!(a.pad_mask.iter().all(|p| !p));
    }

    #[test]
    fn narrow_source_fov_pads_borders() {
        // fx large -> the target FOV needs more than the image holds
        let intr = CameraIntrinsics::centered(200.0, 200.0, 40, 30).unwrap();
        let img = RgbImage::filled(40, 30, 10.0);
        let depth = DepthMap::constant(40, 30, 3.0);
        let a = align_fov(&img, Some(&depth), &intr, &deg(58.0, 45.0)).unwrap();
        let (w, h) = (a.width(), a.height());
        assert!(a.pad_mask[0] && a.pad_mask[w * h - 1]);
        assert!(!a.pad_mask[(h / 2) * w + w / 2]);
        let d = a.depth.as_ref().unwrap();
        for (i, pad) in a.pad_mask.iter().enumerate() {
            if *pad {
                assert_eq!(a.image.pixel(i % w, i / w), [PAD_VALUE; 3]);
                assert!(!d.valid[i]);
            }
        }
    }

    #[test]
    fn matched_fov_is_identity() {
        let (w, h) = (64usize, 48usize);
        let fov = deg(58.0, 45.0);
        let fx = w as f64 / 2.0 / (fov.omega_x / 2.0).tan();
        let fy = h as f64 / 2.0 / (fov.omega_y / 2.0).tan();
        let intr = CameraIntrinsics::centered(fx, fy, w, h).unwrap();
        let img = RgbImage::new(w, h, (0..w * h * 3).map(|v| (v % 251) as f32).collect()).unwrap();
        let depth = DepthMap::from_depths(w, h, (0..w * h).map(|v| 1.0 + v as f32 * 0.01).collect()).unwrap();
        let a = align_fov(&img, Some(&depth), &intr, &fov).unwrap();
        assert!(a.pad_mask.iter().all(|p| !p));
        assert_eq!(a.image, img);
        let back = inverse_align(a.depth.as_ref().unwrap(), &a, &intr).unwrap();
        assert_eq!(back, depth);
    }

    #[test]
    fn inverse_is_nearest_on_downscaled_crop() {
        // 8x8 source, crop 8x8, aligned to 4x4: each restored pixel copies its
        // nearest aligned pixel.
        let fov = FovSpec::new(2.0 * (0.5f64).atan(), 2.0 * (0.5f64).atan(), 4, 4).unwrap();
        let intr = CameraIntrinsics::centered(8.0, 8.0, 8, 8).unwrap();
        let img = RgbImage::filled(8, 8, 1.0);
        let a = align_fov(&img, None, &intr, &fov).unwrap();
        assert_eq!((a.crop_rect.width, a.crop_rect.height), (8, 8));
        let pred = DepthMap::from_depths(4, 4, (1..=16).map(|v| v as f32).collect()).unwrap();
        let back = inverse_align(&pred, &a, &intr).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                assert_eq!(back.depth[y * 8 + x], pred.depth[(y / 2) * 4 + x / 2]);
            }
        }
    }

    #[test]
    fn inverse_marks_outside_crop_invalid() {
        let intr = CameraIntrinsics::centered(20.0, 20.0, 64, 48).unwrap();
        let img = RgbImage::filled(64, 48, 1.0);
        let a = align_fov(&img, None, &intr, &deg(58.0, 45.0)).unwrap();
        let pred = DepthMap::constant(a.width(), a.height(), 2.5);
        let back = inverse_align(&pred, &a, &intr).unwrap();
        assert!(!back.valid[0]);
        assert!(back.valid[back.index(32, 24)]);
        assert!(back.depth.iter().zip(&back.valid).all(|(d, v)| !v || *d == 2.5));
    }
}
