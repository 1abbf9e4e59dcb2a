//! Face-restricted polynomial sharpening and 8-bit sRGB encoding.

use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::imagecore::{gaussian_blur_plane, write_png8, LinearImage, MaskImage};

pub const MIN_SIGMA: f64 = 0.3;
pub const MAX_SIGMA: f64 = 4.0;
/// Face pixels (mask > 0.5) required for blur estimation.
pub const MIN_FACE_PIXELS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SharpenConfig {
    /// Coefficients of `p(b) = c0 + c1 b + c2 b^2`, applied as
    /// `c0 x + c1 G x + c2 G G x`.
    pub coefficients: [f64; 3],
}

impl Default for SharpenConfig {
    fn default() -> Self {
        Self {
            coefficients: [3.0, -3.0, 1.0],
        }
    }
}

/// Isotropic Gaussian blur estimate from the steepest luminance edge inside
/// the face (mask > 0.5). The largest forward difference `g` across an edge
/// of contrast `C` blurred by `G_sigma` is `C (2 Phi(0.5 / sigma) - 1)`;
/// inverting it gives sigma, clamped to `[MIN_SIGMA, MAX_SIGMA]`.
pub fn estimate_gaussian_blur(img: &LinearImage, face: &MaskImage) -> Result<f64> {
    if face.size() != img.size() {
        return Err(Error::SizeMismatch {
            what: "face mask",
            expected: img.size(),
            actual: face.size(),
        });
    }
    let (w, h) = img.size();
    let inside = |i: usize| face.data[i] > 0.5;
    let count = (0..w * h).filter(|&i| inside(i)).count();
    if count < MIN_FACE_PIXELS {
        return Err(Error::invalid(format!(
            "blur estimation needs at least {MIN_FACE_PIXELS} face pixels, found {count}"
        )));
    }
    let lum = img.luminance();
    let (mut lo, mut hi, mut slope) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !inside(i) {
                continue;
            }
            let v = lum[i] as f64;
            lo = lo.min(v);
            hi = hi.max(v);
            let dx = if x + 1 < w && inside(i + 1) { lum[i + 1] as f64 - v } else { 0.0 };
            let dy = if y + 1 < h && inside(i + w) { lum[i + w] as f64 - v } else { 0.0 };
            slope = slope.max(dx.hypot(dy));
        }
    }
    let contrast = hi - lo;
    if contrast <= 0.0 || slope <= 0.0 {
        return Ok(MAX_SIGMA);
    }
    let ratio = (slope / contrast).min(1.0);
    let z = Normal::standard().inverse_cdf(0.5 * (1.0 + ratio));
    let sigma = if z.is_finite() && z > 0.0 { 0.5 / z } else { 0.0 };
    Ok(sigma.clamp(MIN_SIGMA, MAX_SIGMA))
}

/// Applies `p(G_sigma)` channel-wise and blends the result in by the face
/// mask. Pixels with mask 0 are returned unchanged bit for bit; sharpened
/// values are clamped at 0.
pub fn polynomial_sharpen(img: &LinearImage, sigma: f64, face: &MaskImage, cfg: &SharpenConfig) -> Result<LinearImage> {
    if face.size() != img.size() {
        return Err(Error::SizeMismatch {
            what: "face mask",
            expected: img.size(),
            actual: face.size(),
        });
    }
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::invalid(format!("sharpening sigma must be positive, got {sigma}")));
    }
    let [c0, c1, c2] = cfg.coefficients;
    if c0 == 1.0 && c1 == 0.0 && c2 == 0.0 {
        return Ok(img.clone());
    }
    let (w, h) = img.size();
    let mut out = img.clone();
    for c in 0..3 {
        let x = img.plane(c);
        let g1 = gaussian_blur_plane(x, w, h, sigma);
        let g2 = if c2 != 0.0 { gaussian_blur_plane(&g1, w, h, sigma) } else { vec![0.0; w * h] };
        for (i, o) in out.plane_mut(c).iter_mut().enumerate() {
            let m = face.data[i];
            if m <= 0.0 {
                continue;
            }
            let p = (c0 * x[i] as f64 + c1 * g1[i] as f64 + c2 * g2[i] as f64) as f32;
            let v = x[i] + m.min(1.0) * (p - x[i]);
            *o = v.max(0.0);
        }
    }
    Ok(out)
}

/// Interleaved 8-bit sRGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Srgb8Image {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<u8>,
}

impl Srgb8Image {
    pub fn write_png(&self, path: &Path) -> Result<()> {
        write_png8(path, self.width, self.height, &self.rgb)
    }
}

/// sRGB transfer function of a linear value in `[0, 1]`.
pub fn srgb_encode(v: f64) -> f64 {
    if v <= 0.0031308 {
        12.92 * v
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    }
}

/// Linear value of an sRGB-encoded value in `[0, 1]`.
pub fn srgb_decode(e: f64) -> f64 {
    if e <= 0.04045 {
        e / 12.92
    } else {
        ((e + 0.055) / 1.055).powf(2.4)
    }
}

/// Quantizes a linear value to an 8-bit sRGB code, rounding half up.
pub fn encode_code(v: f32) -> u8 {
    let v = if v.is_nan() { 0.0 } else { (v as f64).clamp(0.0, 1.0) };
    (255.0 * srgb_encode(v) + 0.5).floor().min(255.0) as u8
}

/// Linear value of an 8-bit sRGB code.
pub fn decode_code(code: u8) -> f32 {
    srgb_decode(code as f64 / 255.0) as f32
}

/// Clamps to `[0, 1]` and encodes to 8-bit sRGB.
pub fn gamma_encode(img: &LinearImage) -> Srgb8Image {
    let (w, h) = img.size();
    let n = w * h;
    let mut rgb = Vec::with_capacity(3 * n);
    for i in 0..n {
        for c in 0..3 {
            rgb.push(encode_code(img.data[c * n + i]));
        }
    }
    Srgb8Image { width: w, height: h, rgb }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn edge(sigma: f64, n: usize) -> LinearImage {
        let step = LinearImage::from_fn(n, n, |x, _| if x < n / 2 { [0.1; 3] } else { [0.9; 3] });
        if sigma == 0.0 {
            return step;
        }
        let mut out = step.clone();
        for c in 0..3 {
            let b = gaussian_blur_plane(step.plane(c), n, n, sigma);
            out.plane_mut(c).copy_from_slice(&b);
        }
        out
    }

    fn full(n: usize) -> MaskImage {
        MaskImage::filled(n, n, 1.0)
    }

    #[test]
    fn blur_estimates_recover_sigma() {
        let s1 = estimate_gaussian_blur(&edge(1.0, 40), &full(40)).unwrap();
        assert!((s1 - 1.0).abs() < 0.15, "{s1}");
        let s2 = estimate_gaussian_blur(&edge(2.0, 40), &full(40)).unwrap();
        assert!((s2 - 2.0).abs() < 0.3, "{s2}");
        assert_eq!(estimate_gaussian_blur(&edge(0.0, 40), &full(40)).unwrap(), MIN_SIGMA);
    }

    #[test]
    fn blur_estimate_is_monotone() {
        let est: Vec<f64> = [0.5, 1.0, 1.5, 2.0, 3.0]
            .iter()
            .map(|&s| estimate_gaussian_blur(&edge(s, 48), &full(48)).unwrap())
            .collect();
        assert!(est.windows(2).all(|p| p[1] >= p[0]), "{est:?}");
    }

    #[test]
    fn small_face_rejected() {
        let m = MaskImage::from_fn(40, 40, |x, y| if x < 9 && y < 9 { 1.0 } else { 0.0 });
        assert!(estimate_gaussian_blur(&edge(1.0, 40), &m).is_err());
    }

    #[test]
    fn sharpening_steepens_edges_and_respects_mask() {
        let img = edge(1.0, 32);
        let slope = |im: &LinearImage| (0..31).map(|x| im.get(1, x + 1, 16) - im.get(1, x, 16)).fold(0.0, f32::max);
        let cfg = SharpenConfig::default();
        let sharp = polynomial_sharpen(&img, 1.0, &full(32), &cfg).unwrap();
        assert!(slope(&sharp) > slope(&img));
        assert_eq!(polynomial_sharpen(&img, 1.0, &MaskImage::filled(32, 32, 0.0), &cfg).unwrap(), img);
        let identity = SharpenConfig {
            coefficients: [1.0, 0.0, 0.0],
        };
        assert_eq!(polynomial_sharpen(&img, 2.0, &full(32), &identity).unwrap(), img);
    }

    #[test]
    fn sharp_input_at_min_sigma_is_near_identity() {
        let img = LinearImage::from_fn(32, 32, |x, y| {
            let v = 0.4 + 0.2 * ((x as f32 * 0.3).sin() * (y as f32 * 0.2).cos());
            [v, 0.9 * v, 0.5 * v]
        });
        let out = polynomial_sharpen(&img, MIN_SIGMA, &full(32), &SharpenConfig::default()).unwrap();
        let mse: f64 = img.data.iter().zip(&out.data).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>() / img.data.len() as f64;
        assert!(10.0 * (1.0 / mse).log10() > 45.0);
    }

    #[test]
    fn gamma_endpoints_and_midpoint() {
        assert_eq!(encode_code(0.0), 0);
        assert_eq!(encode_code(1.0), 255);
        let expected = (255.0 * (1.055 * 0.5f64.powf(1.0 / 2.4) - 0.055) + 0.5).floor() as u8;
        assert_eq!(expected, 188);
        assert_eq!(encode_code(0.5), 188);
    }

    #[test]
    fn code_round_trip() {
        for code in 0..=255u8 {
            assert_eq!(encode_code(decode_code(code)), code);
        }
    }
}
