//! Dense per-pixel rasters: metric depth with a validity mask, and float RGB.
//!
//! Both are row-major. Resampling follows the half-pixel-center convention
//! (`src = (dst + 0.5) * in / out - 0.5`), the same one the network uses for
//! its interpolation matrices, so host- and tensor-side resizes agree.

use serde::{Deserialize, Serialize};

use crate::error::{shape, Result};

/// Metric depth raster in meters plus a per-pixel validity flag.
///
/// Invalid pixels (zero readings, sky, padding, out-of-range) are excluded
/// from every loss and metric. Valid pixels are expected to hold depth > 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub depth: Vec<f32>,
    pub valid: Vec<bool>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, depth: Vec<f32>, valid: Vec<bool>) -> Result<Self> {
        let n = width * height;
        if depth.len() != n || valid.len() != n {
            return Err(shape(
                format!("{n} pixels"),
                format!("{} depths / {} flags", depth.len(), valid.len()),
            ));
        }
        Ok(Self {
            width,
            height,
            depth,
            valid,
        })
    }

    /// Builds a map where every strictly positive, finite value is valid.
    pub fn from_depths(width: usize, height: usize, depth: Vec<f32>) -> Result<Self> {
        let valid = depth.iter().map(|d| d.is_finite() && *d > 0.0).collect();
        Self::new(width, height, depth, valid)
    }

    pub fn constant(width: usize, height: usize, value: f32) -> Self {
        Self {
            width,
            height,
            depth: vec![value; width * height],
            valid: vec![true; width * height],
        }
    }

    pub fn invalid(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            depth: vec![0.0; width * height],
            valid: vec![false; width * height],
        }
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Depth values of valid pixels, in raster order.
    pub fn valid_depths(&self) -> Vec<f64> {
        self.depth
            .iter()
            .zip(&self.valid)
            .filter(|(_, v)| **v)
            .map(|(d, _)| *d as f64)
            .collect()
    }

    /// Marks pixels deeper than `cap` (or non-positive) invalid.
    pub fn with_cap(mut self, cap: f32) -> Self {
        for (d, v) in self.depth.iter().zip(self.valid.iter_mut()) {
            if *d <= 0.0 || *d > cap || !d.is_finite() {
                *v = false;
            }
        }
        self
    }

    pub fn hflip(&self) -> Self {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                let src = self.index(self.width - 1 - x, y);
                let dst = self.index(x, y);
                out.depth[dst] = self.depth[src];
                out.valid[dst] = self.valid[src];
            }
        }
        out
    }

    /// Nearest-neighbor resample of depth and validity together.
    pub fn resize_nearest(&self, width: usize, height: usize) -> Self {
        let xs = nearest_indices(self.width, width);
        let ys = nearest_indices(self.height, height);
        let mut depth = Vec::with_capacity(width * height);
        let mut valid = Vec::with_capacity(width * height);
        for &sy in &ys {
            for &sx in &xs {
                let i = self.index(sx, sy);
                depth.push(self.depth[i]);
                valid.push(self.valid[i]);
            }
        }
        Self {
            width,
            height,
            depth,
            valid,
        }
    }
}

/// Float RGB raster, values nominally in [0, 255].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// Interleaved `[r, g, b]` per pixel, row-major.
    pub data: Vec<f32>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(shape(
                format!("{} values", width * height * 3),
                data.len(),
            ));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height * 3],
        }
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn hflip(&self) -> Self {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                out.set_pixel(x, y, self.pixel(self.width - 1 - x, y));
            }
        }
        out
    }

    /// Bilinear resample with edge clamping.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Self {
        let xs = bilinear_taps(self.width, width);
        let ys = bilinear_taps(self.height, height);
        let mut out = Self::filled(width, height, 0.0);
        for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                let a = self.pixel(x0, y0);
                let b = self.pixel(x1, y0);
                let c = self.pixel(x0, y1);
                let d = self.pixel(x1, y1);
                let mut px = [0f32; 3];
                for ch in 0..3 {
                    let top = a[ch] * (1.0 - fx) + b[ch] * fx;
                    let bot = c[ch] * (1.0 - fx) + d[ch] * fx;
                    px[ch] = top * (1.0 - fy) + bot * fy;
                }
                out.set_pixel(ox, oy, px);
            }
        }
        out
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| v.round().clamp(0.0, 255.0) as u8)
            .collect()
    }
}

/// Source index for each of `dst` output samples under nearest-neighbor.
pub fn nearest_indices(src: usize, dst: usize) -> Vec<usize> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| (((i as f64 + 0.5) * scale).floor() as usize).min(src - 1))
        .collect()
}

/// `(lo, hi, frac)` taps for each of `dst` output samples under bilinear
/// interpolation with half-pixel centers, clamped at the borders.
pub fn bilinear_taps(src: usize, dst: usize) -> Vec<(usize, usize, f32)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let pos = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            (lo, hi, (pos - lo as f64) as f32)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_identity_and_halving() {
        assert_eq!(nearest_indices(4, 4), vec![0, 1, 2, 3]);
        assert_eq!(nearest_indices(4, 2), vec![1, 3]);
        assert_eq!(nearest_indices(2, 4), vec![0, 0, 1, 1]);
    }

    #[test]
    fn bilinear_identity_is_exact() {
        let img = RgbImage::new(3, 2, (0..18).map(|v| v as f32).collect()).unwrap();
        assert_eq!(img.resize_bilinear(3, 2), img);
    }

    #[test]
    fn hflip_is_involution() {
        let d = DepthMap::from_depths(3, 2, vec![1.0, 2.0, 0.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(d.hflip().hflip(), d);
        assert_eq!(d.hflip().depth[0], 0.0);
        assert!(!d.hflip().valid[0]);
    }

    #[test]
    fn cap_invalidates_far_pixels() {
        let d = DepthMap::from_depths(3, 1, vec![1.0, 9.0, 0.0]).unwrap().with_cap(5.0);
        assert_eq!(d.valid, vec![true, false, false]);
    }
}
