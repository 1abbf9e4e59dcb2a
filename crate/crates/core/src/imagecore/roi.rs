use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::FaceBox;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoiConfig {
    /// Extension factor applied to the detected face box about its center.
    pub scale: f64,
    /// ROI sides are rounded up to a multiple of this many pixels.
    pub tile: usize,
    /// Upper bound on either ROI side.
    pub cap: usize,
}

impl Default for RoiConfig {
    fn default() -> Self {
        Self {
            scale: 1.75,
            tile: 64,
            cap: 512,
        }
    }
}

/// Fusion ROI with the default extension (1.75x) and 64 px tiling.
pub fn compute_fusion_roi(face: &FaceBox, img_w: usize, img_h: usize, cap: usize) -> Result<FaceBox> {
    compute_fusion_roi_with(
        face,
        img_w,
        img_h,
        &RoiConfig {
            cap,
            ..RoiConfig::default()
        },
    )
}

fn side(extended: f64, tile: usize, cap: usize, limit: usize) -> usize {
    let tiles = (extended / tile as f64 - 1e-9).ceil().max(1.0) as usize;
    (tiles * tile).min(cap).min(limit)
}

fn place(center: f64, len: usize, limit: usize) -> usize {
    let start = (center - len as f64 / 2.0).round();
    start.clamp(0.0, (limit - len) as f64) as usize
}

/// Scales `face` about its center, rounds each side up to the tile size,
/// caps it, and slides the box inside the image. The result always has
/// integer corners.
pub fn compute_fusion_roi_with(face: &FaceBox, img_w: usize, img_h: usize, cfg: &RoiConfig) -> Result<FaceBox> {
    let finite = [face.center_x, face.center_y, face.width, face.height]
        .iter()
        .all(|v| v.is_finite());
    if !finite || face.width <= 0.0 || face.height <= 0.0 {
        return Err(Error::invalid(format!("degenerate face box {face:?}")));
    }
    if img_w == 0 || img_h == 0 || cfg.tile == 0 || cfg.cap == 0 || !(cfg.scale > 0.0) {
        return Err(Error::invalid("image size, tile, cap and scale must be positive"));
    }
    if face.right() <= 0.0 || face.bottom() <= 0.0 || face.left() >= img_w as f64 || face.top() >= img_h as f64 {
        return Err(Error::invalid(format!("face box {face:?} lies outside the {img_w}x{img_h} image")));
    }
    let w = side(face.width * cfg.scale, cfg.tile, cfg.cap, img_w);
    let h = side(face.height * cfg.scale, cfg.tile, cfg.cap, img_h);
    let x0 = place(face.center_x, w, img_w);
    let y0 = place(face.center_y, h, img_h);
    Ok(FaceBox::from_corner(x0 as f64, y0 as f64, w as f64, h as f64))
}
