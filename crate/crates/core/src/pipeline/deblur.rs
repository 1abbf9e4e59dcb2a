use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::align::{write_flow, FlowField};
use crate::blend::{alpha_blend, blending_mask, reprojection_error};
use crate::error::{Error, Result, StageExt};
use crate::fusionnet::{forward, FusionNetParams};
use crate::gate::{decide, face_motion, masked_mse as gate_mse, GateDecision};
use crate::imagecore::{smooth_mask, write_image, write_mask, ImageFormat, LinearImage, MaskImage};
use crate::postproc::{estimate_gaussian_blur, gamma_encode, polynomial_sharpen, Srgb8Image};

use super::config::{Ablation, PipelineConfig};
use super::prepare::{prepare, PreparedShot, Shot};

/// The quantities the gate decided on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateInputs {
    pub motion_px: f64,
    pub timestamp_diff_ms: f64,
    pub sensor_gain: f64,
    /// Face-masked MSE between the encoded fused and source frames, `[0, 1]` scale.
    pub masked_mse: f64,
}

/// Per-stage products kept for inspection.
#[derive(Debug, Clone)]
pub struct Intermediates {
    pub prepared: PreparedShot,
    /// Network output over the fusion window.
    pub fused_roi: LinearImage,
    pub reprojection: MaskImage,
    /// Blending mask over the fusion window.
    pub blend_mask: MaskImage,
    pub sharpen_sigma_fused: Option<f64>,
    pub sharpen_sigma_source: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct DeblurOutput {
    pub final_image: Srgb8Image,
    pub decision: GateDecision,
    pub gate_inputs: GateInputs,
    /// Full frame after blending, before post-processing.
    pub blended: LinearImage,
    /// Post-processed, encoded source: the fallback output.
    pub source_final: Srgb8Image,
    pub intermediates: Intermediates,
}

#[derive(Serialize)]
struct IntermediatesManifest<'a> {
    window: [usize; 4],
    decision: &'a GateDecision,
    gate_inputs: &'a GateInputs,
    sharpen_sigma_fused: Option<f64>,
    sharpen_sigma_source: Option<f64>,
    files: Vec<&'static str>,
}

fn sharpen(img: &LinearImage, face: &MaskImage, cfg: &PipelineConfig, ablation: &Ablation) -> Result<(LinearImage, Option<f64>)> {
    if ablation.no_polyblur {
        return Ok((img.clone(), None));
    }
    let sigma = estimate_gaussian_blur(img, face)?;
    Ok((polynomial_sharpen(img, sigma, face, &cfg.sharpen)?, Some(sigma)))
}

/// Runs every stage on one shot. On any gate fallback the final image is the
/// post-processed source. Errors carry the name of the failing stage.
pub fn deblur(shot: &Shot, params: &FusionNetParams, cfg: &PipelineConfig, ablation: &Ablation) -> Result<DeblurOutput> {
    let prepared = prepare(shot, cfg, ablation)?;
    let (x0, y0, _, _) = prepared.window;
    let fused_roi = forward(params, &prepared.inputs).stage("fuse")?;

    let reprojection = reprojection_error(&prepared.source, &prepared.reference_warped_full).stage("blend")?;
    let blend_mask = blending_mask(&prepared.face_mask, &prepared.occlusion, &reprojection, &cfg.blend).stage("blend")?;
    let blended_roi = alpha_blend(&fused_roi, &prepared.source, &blend_mask).stage("blend")?;
    let mut blended = shot.source.clone();
    blended.paste(&blended_roi, x0, y0).stage("blend")?;

    let sigma = if ablation.no_mask_smoothing { 0.0 } else { cfg.mask_smoothing_sigma };
    let face = smooth_mask(&shot.face_mask, sigma);
    let (fused_post, sharpen_sigma_fused) = sharpen(&blended, &face, cfg, ablation).stage("postprocess")?;
    let (source_post, sharpen_sigma_source) = sharpen(&shot.source, &face, cfg, ablation).stage("postprocess")?;
    let fused_final = gamma_encode(&fused_post);
    let source_final = gamma_encode(&source_post);

    let meta = &shot.manifest;
    let centers: Vec<(f64, f64)> = meta.face_centers.iter().map(|c| (c[0], c[1])).collect();
    let gate_inputs = GateInputs {
        motion_px: face_motion(&centers).stage("gate")?,
        timestamp_diff_ms: (meta.meta_reference.timestamp_us - meta.meta_source.timestamp_us) as f64 / 1000.0,
        sensor_gain: meta.meta_source.sensor_gain,
        masked_mse: gate_mse(&gamma_encode(&blended), &gamma_encode(&shot.source), &face).stage("gate")?,
    };
    let decision = decide(
        gate_inputs.motion_px,
        gate_inputs.timestamp_diff_ms,
        gate_inputs.sensor_gain,
        gate_inputs.masked_mse,
        &cfg.gate,
    );
    let final_image = if decision.use_fusion { fused_final } else { source_final.clone() };
    Ok(DeblurOutput {
        final_image,
        decision,
        gate_inputs,
        blended,
        source_final,
        intermediates: Intermediates {
            prepared,
            fused_roi,
            reprojection,
            blend_mask,
            sharpen_sigma_fused,
            sharpen_sigma_source,
        },
    })
}

impl DeblurOutput {
    /// Writes `final.png`, the linear blended frame and every intermediate
    /// (PFM, flows with their sidecars) plus `intermediates.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.final_image.write_png(&dir.join("final.png"))?;
        write_image(&dir.join("blended.pfm"), &self.blended, ImageFormat::Pfm)?;
        let im = &self.intermediates;
        let p = &im.prepared;
        write_image(&dir.join("fused_roi.pfm"), &im.fused_roi, ImageFormat::Pfm)?;
        write_image(&dir.join("reference_matched.pfm"), &p.reference, ImageFormat::Pfm)?;
        write_image(&dir.join("reference_warped.pfm"), &p.reference_warped_full, ImageFormat::Pfm)?;
        let masks: [(&str, &MaskImage); 4] = [
            ("face_mask.pfm", &p.face_mask),
            ("occlusion_mask.pfm", &p.occlusion),
            ("reprojection_error.pfm", &im.reprojection),
            ("blend_mask.pfm", &im.blend_mask),
        ];
        for (name, m) in masks {
            write_mask(&dir.join(name), m)?;
        }
        let flows: [(&str, &FlowField); 2] = [("flow_fwd.pfm", &p.flow_fwd), ("flow_bwd.pfm", &p.flow_bwd)];
        for (name, f) in flows {
            write_flow(&dir.join(name), f)?;
        }
        let (x0, y0, w, h) = p.window;
        let manifest = IntermediatesManifest {
            window: [x0, y0, w, h],
            decision: &self.decision,
            gate_inputs: &self.gate_inputs,
            sharpen_sigma_fused: im.sharpen_sigma_fused,
            sharpen_sigma_source: im.sharpen_sigma_source,
            files: vec![
                "final.png",
                "blended.pfm",
                "fused_roi.pfm",
                "reference_matched.pfm",
                "reference_warped.pfm",
                "face_mask.pfm",
                "occlusion_mask.pfm",
                "reprojection_error.pfm",
                "blend_mask.pfm",
                "flow_fwd.pfm",
                "flow_bwd.pfm",
            ],
        };
        let path = dir.join("intermediates.json");
        fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n").map_err(|e| Error::io(&path, e))
    }
}
