use crate::align::{estimate_flow, occlusion_mask, resize_flow, warp, FlowField};
use crate::colormatch::{ccm_normalize, match_global_mean};
use crate::error::{Error, Result, StageExt};
use crate::fusionnet::FusionInputs;
use crate::imagecore::{
    compute_fusion_roi_with, resample_bilinear, resample_mask, smooth_mask, LinearImage, MaskImage, ShotManifest,
};
use crate::synth::Triplet;

use super::config::{Ablation, FlowResolution, PipelineConfig};

/// One capture: the full W frame, the half-size UW frame covering the same
/// view, the W face mask and the capture metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Shot {
    pub source: LinearImage,
    pub reference: LinearImage,
    pub face_mask: MaskImage,
    pub manifest: ShotManifest,
}

impl Shot {
    pub fn from_triplet(t: &Triplet) -> Self {
        Self {
            source: t.source.clone(),
            reference: t.reference.clone(),
            face_mask: t.face_mask.clone(),
            manifest: t.meta.manifest.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.source.validate()?;
        self.reference.validate()?;
        self.face_mask.validate()?;
        let (w, h) = self.source.size();
        if w % 2 != 0 || h % 2 != 0 {
            return Err(Error::invalid(format!("source size {w}x{h} must be even")));
        }
        for (what, expected, actual) in [
            ("reference", (w / 2, h / 2), self.reference.size()),
            ("face mask", (w, h), self.face_mask.size()),
        ] {
            if actual != expected {
                return Err(Error::SizeMismatch { what, expected, actual });
            }
        }
        self.manifest.meta_source.validate()?;
        self.manifest.meta_reference.validate()
    }
}

/// Fusion crop `(x0, y0, width, height)` in source pixels: the ROI around
/// the face, shrunk to a multiple of `multiple` and moved to even corners so
/// the half-size reference crop lines up.
pub fn fusion_window(shot: &Shot, cfg: &PipelineConfig) -> Result<(usize, usize, usize, usize)> {
    let (w, h) = shot.source.size();
    let roi = compute_fusion_roi_with(&shot.manifest.face_box, w, h, &cfg.roi)?;
    let m = cfg.net.size_multiple().max(2);
    let (rw, rh) = (roi.width as usize / m * m, roi.height as usize / m * m);
    if rw == 0 || rh == 0 {
        return Err(Error::invalid(format!(
            "fusion ROI {}x{} is smaller than the network's size multiple {m}",
            roi.width, roi.height
        )));
    }
    let even = |v: f64, len: usize, limit: usize| ((v as usize).min(limit - len)) & !1;
    Ok((even(roi.left(), rw, w), even(roi.top(), rh, h), rw, rh))
}

/// Everything computed before the network runs, all restricted to the
/// fusion window.
#[derive(Debug, Clone)]
pub struct PreparedShot {
    pub window: (usize, usize, usize, usize),
    pub source: LinearImage,
    /// Smoothed face mask at source resolution.
    pub face_mask: MaskImage,
    /// Color-matched reference at half resolution.
    pub reference: LinearImage,
    pub flow_fwd: FlowField,
    pub flow_bwd: FlowField,
    /// Occlusion mask at source resolution.
    pub occlusion: MaskImage,
    /// Warped reference upsampled to source resolution.
    pub reference_warped_full: LinearImage,
    pub inputs: FusionInputs,
}

/// Crops, color-matches and aligns a shot and assembles the network inputs.
pub fn prepare(shot: &Shot, cfg: &PipelineConfig, ablation: &Ablation) -> Result<PreparedShot> {
    shot.validate().stage("prepare")?;
    let window = fusion_window(shot, cfg).stage("prepare")?;
    let (x0, y0, rw, rh) = window;
    let (hw, hh) = (rw / 2, rh / 2);
    let source = shot.source.crop(x0, y0, rw, rh).stage("prepare")?;
    let sigma = if ablation.no_mask_smoothing { 0.0 } else { cfg.mask_smoothing_sigma };
    let face_mask = smooth_mask(&shot.face_mask, sigma).crop(x0, y0, rw, rh).stage("prepare")?;
    let reference = shot.reference.crop(x0 / 2, y0 / 2, hw, hh).stage("prepare")?;

    let meta = &shot.manifest;
    let normalized = ccm_normalize(&reference, &meta.meta_source.ccm, &meta.meta_reference.ccm).stage("color_match")?;
    let reference = match_global_mean(&normalized.image, &source).stage("color_match")?;

    let mut flow_cfg = cfg.align.flow.clone();
    if ablation.flow_resolution == FlowResolution::Full {
        flow_cfg.downsample_factor_for_estimation = 1;
    }
    let reference_up = resample_bilinear(&reference, rw, rh).stage("align")?;
    let flow_fwd = estimate_flow(&source, &reference_up, &flow_cfg).stage("align")?;
    let flow_bwd = estimate_flow(&reference_up, &source, &flow_cfg).stage("align")?;
    let fwd_half = resize_flow(&flow_fwd, hw, hh).stage("align")?;
    let reference_warped = warp(&reference, &fwd_half).stage("align")?;
    let reference_warped_full = warp(&reference_up, &resize_flow(&flow_fwd, rw, rh).stage("align")?).stage("align")?;
    let factor = flow_cfg.downsample_factor_for_estimation.max(1);
    let (ew, eh) = ((rw / factor).max(1), (rh / factor).max(1));
    let occlusion_est = if ablation.no_occlusion_mask {
        MaskImage::filled(ew, eh, 0.0)
    } else {
        let fwd_est = resize_flow(&flow_fwd, ew, eh).stage("align")?;
        let bwd_est = resize_flow(&flow_bwd, ew, eh).stage("align")?;
        occlusion_mask(&fwd_est, &bwd_est, cfg.align.occlusion_strength as f32).stage("align")?
    };
    let occlusion_half = resample_mask(&occlusion_est, hw, hh).stage("align")?;
    let occlusion = resample_mask(&occlusion_est, rw, rh).stage("align")?;

    let inputs = FusionInputs {
        source: source.clone(),
        reference_warped: if ablation.no_reference {
            LinearImage::new(hw, hh)
        } else {
            reference_warped
        },
        face_mask: resample_mask(&face_mask, hw, hh).stage("prepare")?,
        occlusion_mask: occlusion_half,
    };
    Ok(PreparedShot {
        window,
        source,
        face_mask,
        reference,
        flow_fwd,
        flow_bwd,
        occlusion,
        reference_warped_full,
        inputs,
    })
}
