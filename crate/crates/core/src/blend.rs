//! Compositing of the fused face back into the source frame.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::{LinearImage, MaskImage};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlendConfig {
    /// Weight of the occlusion mask.
    pub alpha: f32,
    /// Weight of the reprojection-error mask.
    pub beta: f32,
}

impl Default for BlendConfig {
    fn default() -> Self {
        Self { alpha: 5.0, beta: 2.0 }
    }
}

impl BlendConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) || !self.alpha.is_finite() || !self.beta.is_finite() {
            return Err(Error::invalid("blend weights must be finite and non-negative"));
        }
        Ok(())
    }
}

fn check_size(what: &'static str, expected: (usize, usize), actual: (usize, usize)) -> Result<()> {
    if expected != actual {
        return Err(Error::SizeMismatch { what, expected, actual });
    }
    Ok(())
}

/// Per-pixel maximum absolute channel difference, clamped to `[0, 1]`.
/// The warped reference must already be at source resolution.
pub fn reprojection_error(src: &LinearImage, ref_warped: &LinearImage) -> Result<MaskImage> {
    check_size("warped reference", src.size(), ref_warped.size())?;
    let n = src.width * src.height;
    let mut out = MaskImage::filled(src.width, src.height, 0.0);
    for c in 0..3 {
        let (a, b) = (&src.data[c * n..(c + 1) * n], &ref_warped.data[c * n..(c + 1) * n]);
        for ((o, &x), &y) in out.data.iter_mut().zip(a).zip(b) {
            *o = o.max((x - y).abs());
        }
    }
    out.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    Ok(out)
}

/// `clamp(face - alpha * occ - beta * reproj, 0, 1)`.
pub fn blending_mask(face: &MaskImage, occ: &MaskImage, reproj: &MaskImage, cfg: &BlendConfig) -> Result<MaskImage> {
    cfg.validate()?;
    check_size("occlusion mask", face.size(), occ.size())?;
    check_size("reprojection mask", face.size(), reproj.size())?;
    let mut out = face.clone();
    for ((m, &o), &r) in out.data.iter_mut().zip(&occ.data).zip(&reproj.data) {
        *m = (*m - cfg.alpha * o - cfg.beta * r).clamp(0.0, 1.0);
    }
    Ok(out)
}

/// `m * fused + (1 - m) * src`. Pixels with `m == 0` are copied from `src`
/// and pixels with `m == 1` from `fused`, bit for bit.
pub fn alpha_blend(fused: &LinearImage, src: &LinearImage, m: &MaskImage) -> Result<LinearImage> {
    check_size("fused image", src.size(), fused.size())?;
    check_size("blend mask", src.size(), m.size())?;
    let n = src.width * src.height;
    let mut out = src.clone();
    for c in 0..3 {
        let f = &fused.data[c * n..(c + 1) * n];
        for ((o, &fv), &mv) in out.data[c * n..(c + 1) * n].iter_mut().zip(f).zip(&m.data) {
            if mv <= 0.0 {
                continue;
            }
            if mv >= 1.0 {
                *o = fv;
                continue;
            }
            let s = *o;
            let v = mv * fv + (1.0 - mv) * s;
            *o = v.clamp(s.min(fv), s.max(fv));
        }
    }
    Ok(out)
}
