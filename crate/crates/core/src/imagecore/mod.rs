//! Linear-image and mask data model, file I/O, resampling, face-ROI geometry
//! and mask smoothing.

mod filter;
mod io;
mod resample;
mod roi;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use filter::{
    gaussian_blur_plane, gaussian_blur_plane_adjoint, gaussian_kernel, smooth_mask,
};
pub use io::{
    decode_pfm, encode_pfm, read_image, read_manifest, read_mask, write_image, write_manifest,
    write_mask, write_png8, ImageFormat, PfmData,
};
pub use resample::{downsample2x, resample_bilinear, resample_mask, resample_plane, sample_bilinear};
pub use roi::{compute_fusion_roi, compute_fusion_roi_with, RoiConfig};

/// Planar linear-RGB image. Channel `c` occupies
/// `data[c * width * height..(c + 1) * width * height]`, each plane row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl LinearImage {
    pub const CHANNELS: usize = 3;

    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self {
            width,
            height,
            data: vec![value; 3 * width * height],
        }
    }

    pub fn from_planes(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != 3 * width * height {
            return Err(Error::invalid(format!(
                "expected {} samples for a {width}x{height} image, got {}",
                3 * width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Builds an image from a per-pixel function `f(x, y) -> [r, g, b]`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Self {
        let mut img = Self::new(width, height);
        let n = width * height;
        for y in 0..height {
            for x in 0..width {
                let rgb = f(x, y);
                for (c, v) in rgb.into_iter().enumerate() {
                    img.data[c * n + y * width + x] = v;
                }
            }
        }
        img
    }

    pub fn size(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.pixels();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.pixels();
        &mut self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, x: usize, y: usize) -> f32 {
        self.data[c * self.pixels() + y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, x: usize, y: usize, v: f32) {
        let n = self.pixels();
        self.data[c * n + y * self.width + x] = v;
    }

    /// Checks the ingest invariants: finite and non-negative.
    pub fn validate(&self) -> Result<()> {
        let n = self.pixels();
        for (i, &v) in self.data.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                let c = i / n;
                let p = i % n;
                return Err(Error::InvalidPixel {
                    x: p % self.width,
                    y: p / self.width,
                    channel: c,
                    value: v,
                });
            }
        }
        Ok(())
    }

    pub fn clamp_non_negative(&mut self) -> usize {
        let mut clamped = 0;
        for v in &mut self.data {
            if *v < 0.0 {
                *v = 0.0;
                clamped += 1;
            }
        }
        clamped
    }

    pub fn channel_means(&self) -> [f64; 3] {
        let n = self.pixels() as f64;
        let mut out = [0.0; 3];
        for (c, m) in out.iter_mut().enumerate() {
            *m = self.plane(c).iter().map(|&v| v as f64).sum::<f64>() / n;
        }
        out
    }

    /// Rec. 709 luminance plane.
    pub fn luminance(&self) -> Vec<f32> {
        let (r, g, b) = (self.plane(0), self.plane(1), self.plane(2));
        r.iter()
            .zip(g)
            .zip(b)
            .map(|((&r, &g), &b)| 0.2126 * r + 0.7152 * g + 0.0722 * b)
            .collect()
    }

    /// Copies the `w`x`h` window whose top-left corner is `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::invalid(format!(
                "crop {w}x{h}+{x0}+{y0} exceeds {}x{}",
                self.width, self.height
            )));
        }
        let mut out = Self::new(w, h);
        for c in 0..3 {
            let src = self.plane(c);
            let dst = out.plane_mut(c);
            for y in 0..h {
                let s = (y0 + y) * self.width + x0;
                dst[y * w..(y + 1) * w].copy_from_slice(&src[s..s + w]);
            }
        }
        Ok(out)
    }

    pub fn paste(&mut self, patch: &LinearImage, x0: usize, y0: usize) -> Result<()> {
        if x0 + patch.width > self.width || y0 + patch.height > self.height {
            return Err(Error::invalid("paste window exceeds destination"));
        }
        for c in 0..3 {
            let w = self.width;
            let src = patch.plane(c);
            let dst = self.plane_mut(c);
            for y in 0..patch.height {
                let d = (y0 + y) * w + x0;
                dst[d..d + patch.width].copy_from_slice(&src[y * patch.width..(y + 1) * patch.width]);
            }
        }
        Ok(())
    }
}

/// Single-channel map with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl MaskImage {
    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::invalid("mask data length does not match size"));
        }
        let m = Self {
            width,
            height,
            data,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y).clamp(0.0, 1.0));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn size(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn validate(&self) -> Result<()> {
        for (i, &v) in self.data.iter().enumerate() {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidPixel {
                    x: i % self.width,
                    y: i / self.width,
                    channel: 0,
                    value: v,
                });
            }
        }
        Ok(())
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::invalid("mask crop exceeds bounds"));
        }
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            let s = (y0 + y) * self.width + x0;
            data.extend_from_slice(&self.data[s..s + w]);
        }
        Ok(Self {
            width: w,
            height: h,
            data,
        })
    }

    /// Filled ellipse inscribed in `face`, anti-aliased by 4x4 supersampling.
    pub fn ellipse(width: usize, height: usize, face: &FaceBox) -> Self {
        let (rx, ry) = (face.width / 2.0, face.height / 2.0);
        Self::from_fn(width, height, |x, y| {
            let mut hits = 0;
            for sy in 0..4 {
                for sx in 0..4 {
                    let px = x as f64 + (sx as f64 + 0.5) / 4.0;
                    let py = y as f64 + (sy as f64 + 0.5) / 4.0;
                    let dx = (px - face.center_x) / rx;
                    let dy = (py - face.center_y) / ry;
                    if dx * dx + dy * dy <= 1.0 {
                        hits += 1;
                    }
                }
            }
            hits as f32 / 16.0
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Camera {
    W,
    UW,
}

/// Per-shot capture parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureMetadata {
    pub exposure_time_s: f64,
    pub sensor_gain: f64,
    /// Row-major 3x3 color-conversion matrix.
    pub ccm: [f64; 9],
    pub timestamp_us: i64,
    pub camera: Camera,
}

impl CaptureMetadata {
    pub fn validate(&self) -> Result<()> {
        if !(self.exposure_time_s > 0.0) {
            return Err(Error::invalid("exposure_time_s must be positive"));
        }
        if !(self.sensor_gain >= 1.0) {
            return Err(Error::invalid("sensor_gain must be >= 1"));
        }
        let det = nalgebra::Matrix3::from_row_slice(&self.ccm).determinant();
        if det.abs() <= 1e-9 {
            return Err(Error::SingularMatrix(det.abs()));
        }
        Ok(())
    }

    pub const IDENTITY_CCM: [f64; 9] = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
}

/// Axis-aligned box in pixel units, described by its center and extent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaceBox {
    pub center_x: f64,
    pub center_y: f64,
    pub width: f64,
    pub height: f64,
}

impl FaceBox {
    pub fn from_corner(x0: f64, y0: f64, width: f64, height: f64) -> Self {
        Self {
            center_x: x0 + width / 2.0,
            center_y: y0 + height / 2.0,
            width,
            height,
        }
    }

    pub fn left(&self) -> f64 {
        self.center_x - self.width / 2.0
    }

    pub fn top(&self) -> f64 {
        self.center_y - self.height / 2.0
    }

    pub fn right(&self) -> f64 {
        self.center_x + self.width / 2.0
    }

    pub fn bottom(&self) -> f64 {
        self.center_y + self.height / 2.0
    }

    /// Integer pixel window `(x0, y0, w, h)`; exact for boxes produced by
    /// [`compute_fusion_roi`].
    pub fn pixel_window(&self) -> (usize, usize, usize, usize) {
        (
            self.left().round().max(0.0) as usize,
            self.top().round().max(0.0) as usize,
            self.width.round() as usize,
            self.height.round() as usize,
        )
    }
}

/// JSON sidecar that travels with a source/reference pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotManifest {
    pub face_box: FaceBox,
    pub meta_source: CaptureMetadata,
    pub meta_reference: CaptureMetadata,
    /// Face-box centers across the W burst, used for the motion gate.
    #[serde(default)]
    pub face_centers: Vec<[f64; 2]>,
}
