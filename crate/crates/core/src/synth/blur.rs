use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::{LinearImage, MaskImage};

use super::kernel::BlurKernel;

/// Heteroscedastic Gaussian approximation of read plus shot noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    pub read_sigma: f64,
    pub shot_gain: f64,
}

impl NoiseParams {
    pub const ZERO: NoiseParams = NoiseParams {
        read_sigma: 0.0,
        shot_gain: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        if !(self.read_sigma >= 0.0 && self.shot_gain >= 0.0) {
            return Err(Error::invalid("noise parameters must be non-negative"));
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.read_sigma == 0.0 && self.shot_gain == 0.0
    }

    /// Same model with every standard deviation multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            read_sigma: self.read_sigma * factor,
            shot_gain: self.shot_gain * factor * factor,
        }
    }
}

/// Edge-clamped convolution of one plane with the kernel's nonzero taps.
pub fn convolve_plane(src: &[f32], w: usize, h: usize, k: &BlurKernel) -> Vec<f32> {
    let taps = k.taps();
    let mut acc = vec![0.0f64; w * h];
    for &(dx, dy, wt) in &taps {
        // out(x) = sum_t k(t) * in(x - t)
        let wt = wt as f64;
        for y in 0..h {
            let sy = (y as isize - dy).clamp(0, h as isize - 1) as usize;
            let row = &src[sy * w..(sy + 1) * w];
            let out = &mut acc[y * w..(y + 1) * w];
            for (x, o) in out.iter_mut().enumerate() {
                let sx = (x as isize - dx).clamp(0, w as isize - 1) as usize;
                *o += wt * row[sx] as f64;
            }
        }
    }
    acc.into_iter().map(|v| v as f32).collect()
}

pub fn convolve(img: &LinearImage, k: &BlurKernel) -> LinearImage {
    let mut out = img.clone();
    for c in 0..3 {
        let plane = convolve_plane(img.plane(c), img.width, img.height, k);
        out.plane_mut(c).copy_from_slice(&plane);
    }
    out
}

/// Adds seeded noise in place and clamps at zero.
pub fn add_noise(img: &mut LinearImage, noise: &NoiseParams, rng_seed: u64) -> Result<()> {
    noise.validate()?;
    if noise.is_zero() {
        return Ok(());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let read_var = noise.read_sigma * noise.read_sigma;
    for v in img.data.iter_mut() {
        let var = read_var + noise.shot_gain * (*v as f64).max(0.0);
        let z: f64 = rng.sample(StandardNormal);
        *v = ((*v as f64) + var.sqrt() * z).max(0.0) as f32;
    }
    Ok(())
}

/// Motion blur confined to the (blurred) face region, plus sensor noise.
/// The kernel also blurs the mask so the subject ghosts over its boundary.
pub fn apply_blur_model(
    gt: &LinearImage,
    face_mask: &MaskImage,
    k: &BlurKernel,
    noise: &NoiseParams,
    rng_seed: u64,
) -> Result<LinearImage> {
    if face_mask.size() != gt.size() {
        return Err(Error::SizeMismatch {
            what: "face mask",
            expected: gt.size(),
            actual: face_mask.size(),
        });
    }
    noise.validate()?;
    let (w, h) = gt.size();
    let m_blur = convolve_plane(&face_mask.data, w, h, k);
    let blurred = convolve(gt, k);
    let mut out = gt.clone();
    for c in 0..3 {
        let b = blurred.plane(c);
        for (p, o) in out.plane_mut(c).iter_mut().enumerate() {
            let m = m_blur[p];
            if m != 0.0 {
                *o += m * (b[p] - *o);
            }
        }
    }
    add_noise(&mut out, noise, rng_seed)?;
    out.clamp_non_negative();
    Ok(out)
}
