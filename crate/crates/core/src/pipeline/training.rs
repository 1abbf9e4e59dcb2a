use std::path::PathBuf;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fusionnet::{train, FusionNetParams, ModelVariant, TrainOutcome, TrainSample};
use crate::synth::{generate_triplet, read_triplet, SceneConfig};

use super::config::{Ablation, PipelineConfig};
use super::prepare::{prepare, Shot};

/// Prepared network inputs and ground-truth crops for each triplet
/// directory. For a model trained without highlights the triplets are
/// regenerated from their seeds with highlights switched off, which leaves
/// every other component unchanged.
pub fn training_samples(dirs: &[PathBuf], cfg: &PipelineConfig, variant: &ModelVariant) -> Result<Vec<TrainSample>> {
    if dirs.is_empty() {
        return Err(Error::invalid("training needs at least one triplet"));
    }
    let ablation = Ablation {
        no_reference: !variant.reference,
        ..Ablation::default()
    };
    dirs.par_iter()
        .map(|dir| {
            let mut t = read_triplet(dir)?;
            if !variant.highlights && !t.meta.highlights.is_empty() {
                let scene = SceneConfig {
                    highlights: false,
                    ..t.meta.scene.clone()
                };
                t = generate_triplet(&scene, t.meta.seed)?;
            }
            let p = prepare(&Shot::from_triplet(&t), cfg, &ablation)?;
            let (x0, y0, w, h) = p.window;
            Ok(TrainSample {
                gt: t.gt.crop(x0, y0, w, h)?,
                inputs: p.inputs,
            })
        })
        .collect()
}

/// Trains a fresh network of `cfg.net` on `samples` and tags it with the
/// variant. Without the color loss its weight is zeroed.
pub fn train_model(samples: &[TrainSample], cfg: &PipelineConfig, variant: ModelVariant, seed: u64) -> Result<TrainOutcome> {
    let mut loss = cfg.loss.clone();
    if !variant.color_loss {
        loss.w_color = 0.0;
    }
    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = seed;
    let params = FusionNetParams::init(&cfg.net, seed)?;
    let mut outcome = train(samples, params, &loss, &train_cfg)?;
    outcome.params.variant = variant;
    Ok(outcome)
}
