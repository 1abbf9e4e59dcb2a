use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::align::FlowEstimatorConfig;
use crate::blend::BlendConfig;
use crate::error::{Error, Result};
use crate::fusionnet::{LossConfig, ModelVariant, NetConfig, TrainConfig};
use crate::gate::GateConfig;
use crate::imagecore::RoiConfig;
use crate::postproc::SharpenConfig;
use crate::streamsim::{MotionScenarioConfig, SessionConfig, SvmConfig};
use crate::synth::SceneConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignConfig {
    pub flow: FlowEstimatorConfig,
    /// Scale applied to the forward-backward round-trip distance, measured in
    /// pixels of the flow estimation grid.
    pub occlusion_strength: f64,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            flow: FlowEstimatorConfig {
                block_size: 16,
                ..FlowEstimatorConfig::default()
            },
            occlusion_strength: 2.0,
        }
    }
}

/// Every module's settings, loadable from one JSON file. Missing sections
/// take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub scene: SceneConfig,
    pub roi: RoiConfig,
    /// Gaussian sigma of the face-mask boundary smoothing, in source pixels.
    pub mask_smoothing_sigma: f64,
    pub align: AlignConfig,
    pub net: NetConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub blend: BlendConfig,
    pub sharpen: SharpenConfig,
    pub gate: GateConfig,
    pub session: SessionConfig,
    pub svm: SvmConfig,
    /// Generator of simulated sessions when no scenario file is given.
    pub motion_scenario: MotionScenarioConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            scene: SceneConfig::default(),
            roi: RoiConfig::default(),
            mask_smoothing_sigma: 5.0,
            align: AlignConfig::default(),
            net: NetConfig {
                channels: vec![16, 32, 64],
                ..NetConfig::default()
            },
            loss: LossConfig::default(),
            train: TrainConfig {
                steps: 6000,
                lr_half_life_steps: 6000.0,
                ..TrainConfig::default()
            },
            blend: BlendConfig::default(),
            sharpen: SharpenConfig::default(),
            gate: GateConfig::default(),
            session: SessionConfig::default(),
            svm: SvmConfig::default(),
            motion_scenario: MotionScenarioConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        if self.roi.tile == 0 || self.roi.cap == 0 || !(self.roi.scale > 0.0) {
            return Err(Error::invalid("roi tile, cap and scale must be positive"));
        }
        if !(self.mask_smoothing_sigma >= 0.0 && self.mask_smoothing_sigma.is_finite()) {
            return Err(Error::invalid("mask_smoothing_sigma must be non-negative"));
        }
        self.align.flow.validate()?;
        if !(self.align.occlusion_strength >= 0.0 && self.align.occlusion_strength.is_finite()) {
            return Err(Error::invalid("occlusion_strength must be non-negative"));
        }
        self.net.validate()?;
        self.loss.validate()?;
        self.blend.validate()?;
        self.gate.validate()?;
        self.session.validate()?;
        self.motion_scenario.validate(&self.session)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowResolution {
    /// Estimate on the full-size crops.
    Full,
    /// Estimate after the configured downsampling.
    #[default]
    Quarter,
}

/// Evaluation-time switches. The first three name the training variant the
/// parameters must come from; the rest change inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    pub no_color_loss_model: bool,
    pub no_highlight_model: bool,
    /// Zero the reference input of the network.
    pub no_reference: bool,
    pub no_occlusion_mask: bool,
    pub flow_resolution: FlowResolution,
    pub no_mask_smoothing: bool,
    pub no_polyblur: bool,
}

impl Ablation {
    /// The training variant these switches call for.
    pub fn model_variant(&self) -> ModelVariant {
        ModelVariant {
            color_loss: !self.no_color_loss_model,
            highlights: !self.no_highlight_model,
            reference: !self.no_reference,
        }
    }

    /// Rejects parameters trained under a different variant.
    pub fn check_model(&self, variant: &ModelVariant) -> Result<()> {
        let wanted = self.model_variant();
        if *variant != wanted {
            return Err(Error::invalid(format!(
                "parameters were trained as {variant:?} but the ablation flags require {wanted:?}"
            )));
        }
        Ok(())
    }

    /// Short label used in reports, `full` when nothing is switched.
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        let flags = [
            (self.no_color_loss_model, "no-color-loss-model"),
            (self.no_highlight_model, "no-highlight-model"),
            (self.no_reference, "no-reference"),
            (self.no_occlusion_mask, "no-occlusion-mask"),
            (self.flow_resolution == FlowResolution::Full, "flow-resolution-full"),
            (self.no_mask_smoothing, "no-mask-smoothing"),
            (self.no_polyblur, "no-polyblur"),
        ];
        for (on, name) in flags {
            if on {
                parts.push(name);
            }
        }
        if parts.is_empty() {
            "full".to_string()
        } else {
            parts.join("+")
        }
    }
}
