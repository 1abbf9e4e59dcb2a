use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fusionnet::FusionNetParams;
use crate::gate::GateReason;
use crate::imagecore::{write_image, ImageFormat, LinearImage};
use crate::postproc::{decode_code, Srgb8Image};
use crate::synth::{list_triplets, read_triplet, Triplet};

use super::config::{Ablation, PipelineConfig};
use super::deblur::{deblur, DeblurOutput};
use super::metrics::{masked_mse, masked_psnr, smoothed_mean_deviation};
use super::prepare::Shot;

pub const METRICS_FILE: &str = "metrics.csv";

/// Metrics of one triplet. PSNR values are face-masked against the ground
/// truth with both images clamped to `[0, 1]`; MSE values are unclamped.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRecord {
    pub name: String,
    pub highlights: usize,
    pub gate_reason: GateReason,
    pub source_psnr: f64,
    /// Network output pasted into the source frame.
    pub fused_psnr: f64,
    /// Blended frame before post-processing, regardless of the gate.
    pub blended_psnr: f64,
    /// Decoded 8-bit output after the gate.
    pub final_psnr: f64,
    /// Raw network output against the ground truth over the fusion window.
    pub network_mse: f64,
    /// Smoothed channel-mean deviation of the network output from the source.
    pub color_deviation: f64,
    /// Gate MSE on the 255 scale.
    pub gate_mse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub ablation: String,
    pub records: Vec<EvalRecord>,
    pub mean_source_psnr: f64,
    pub mean_fused_psnr: f64,
    pub mean_blended_psnr: f64,
    pub mean_final_psnr: f64,
    pub mean_network_mse: f64,
    pub mean_color_deviation: f64,
    pub fusion_rate: f64,
    pub csv_path: PathBuf,
}

fn decode(img: &Srgb8Image) -> Result<LinearImage> {
    let n = img.width * img.height;
    let mut data = vec![0.0f32; 3 * n];
    for i in 0..n {
        for c in 0..3 {
            data[c * n + i] = decode_code(img.rgb[3 * i + c]);
        }
    }
    LinearImage::from_planes(img.width, img.height, data)
}

fn clamped(img: &LinearImage) -> LinearImage {
    let mut out = img.clone();
    out.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    out
}

fn record(name: String, t: &Triplet, out: &DeblurOutput, cfg: &PipelineConfig) -> Result<EvalRecord> {
    let face = &t.face_mask;
    let gt = clamped(&t.gt);
    let p = &out.intermediates.prepared;
    let (x0, y0, w, h) = p.window;
    let mut fused = t.source.clone();
    fused.paste(&out.intermediates.fused_roi, x0, y0)?;
    let gt_roi = t.gt.crop(x0, y0, w, h)?;
    let face_roi = face.crop(x0, y0, w, h)?;
    Ok(EvalRecord {
        name,
        highlights: t.meta.highlights.len(),
        gate_reason: out.decision.reason,
        source_psnr: masked_psnr(&clamped(&t.source), &gt, face)?,
        fused_psnr: masked_psnr(&clamped(&fused), &gt, face)?,
        blended_psnr: masked_psnr(&clamped(&out.blended), &gt, face)?,
        final_psnr: masked_psnr(&decode(&out.final_image)?, &gt, face)?,
        network_mse: masked_mse(&out.intermediates.fused_roi, &gt_roi, &face_roi)?,
        color_deviation: smoothed_mean_deviation(&out.intermediates.fused_roi, &p.source, &face_roi, cfg.loss.color_sigma)?,
        gate_mse: out.gate_inputs.masked_mse * cfg.gate.mse_scale,
    })
}

fn mean(records: &[EvalRecord], f: impl Fn(&EvalRecord) -> f64) -> f64 {
    records.iter().map(f).sum::<f64>() / records.len() as f64
}

fn reason_label(r: GateReason) -> String {
    serde_json::to_value(r)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

fn write_csv(path: &Path, s: &EvalSummary) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "name",
        "highlights",
        "gate_reason",
        "source_psnr",
        "fused_psnr",
        "blended_psnr",
        "final_psnr",
        "network_mse",
        "color_deviation",
        "gate_mse",
    ])?;
    let f = |v: f64| format!("{v:.6}");
    let g = |v: f64| format!("{v:.8e}");
    for r in &s.records {
        w.write_record([
            r.name.clone(),
            r.highlights.to_string(),
            reason_label(r.gate_reason),
            f(r.source_psnr),
            f(r.fused_psnr),
            f(r.blended_psnr),
            f(r.final_psnr),
            g(r.network_mse),
            g(r.color_deviation),
            g(r.gate_mse),
        ])?;
    }
    w.write_record([
        "mean".to_string(),
        String::new(),
        format!("fusion_rate={:.4}", s.fusion_rate),
        f(s.mean_source_psnr),
        f(s.mean_fused_psnr),
        f(s.mean_blended_psnr),
        f(s.mean_final_psnr),
        g(s.mean_network_mse),
        g(s.mean_color_deviation),
        String::new(),
    ])?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Deblurs every triplet under `dataset_dir` and writes `metrics.csv` plus,
/// per triplet, `blended.pfm` and `final.png` (and all intermediates when
/// `dump_intermediates` is set) under `out_dir`. Triplets run in parallel;
/// rows are ordered by directory name. Nothing is written unless every
/// triplet succeeds.
pub fn evaluate(
    dataset_dir: &Path,
    params: &FusionNetParams,
    cfg: &PipelineConfig,
    ablation: &Ablation,
    out_dir: &Path,
    dump_intermediates: bool,
) -> Result<EvalSummary> {
    cfg.validate()?;
    ablation.check_model(&params.variant)?;
    let dirs = list_triplets(dataset_dir)?;
    if dirs.is_empty() {
        return Err(Error::invalid(format!("no triplets found under {}", dataset_dir.display())));
    }
    let results: Vec<(EvalRecord, DeblurOutput)> = dirs
        .par_iter()
        .map(|dir| {
            let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            let t = read_triplet(dir)?;
            let out = deblur(&Shot::from_triplet(&t), params, cfg, ablation)?;
            Ok((record(name, &t, &out, cfg)?, out))
        })
        .collect::<Result<_>>()?;

    let records: Vec<EvalRecord> = results.iter().map(|r| r.0.clone()).collect();
    let summary = EvalSummary {
        ablation: ablation.label(),
        mean_source_psnr: mean(&records, |r| r.source_psnr),
        mean_fused_psnr: mean(&records, |r| r.fused_psnr),
        mean_blended_psnr: mean(&records, |r| r.blended_psnr),
        mean_final_psnr: mean(&records, |r| r.final_psnr),
        mean_network_mse: mean(&records, |r| r.network_mse),
        mean_color_deviation: mean(&records, |r| r.color_deviation),
        fusion_rate: records.iter().filter(|r| r.gate_reason == GateReason::Ok).count() as f64 / records.len() as f64,
        csv_path: out_dir.join(METRICS_FILE),
        records,
    };

    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    for (rec, out) in &results {
        let dir = out_dir.join(&rec.name);
        if dump_intermediates {
            out.write(&dir)?;
        } else {
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            write_image(&dir.join("blended.pfm"), &out.blended, ImageFormat::Pfm)?;
            out.final_image.write_png(&dir.join("final.png"))?;
        }
    }
    write_csv(&summary.csv_path, &summary)?;
    Ok(summary)
}
