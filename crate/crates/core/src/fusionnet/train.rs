use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::LinearImage;
use crate::real::Real;

use super::loss::{loss_and_grad, LossConfig, LossParts, PyramidFeatures};
use super::net::{FusionInputs, Tape};
use super::ops::Tensor;
use super::params::FusionNetParams;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub inputs: FusionInputs,
    pub gt: LinearImage,
}

impl TrainSample {
    /// Aligned sub-window at even source coordinates `(x0, y0)` of side `size`.
    pub fn crop(&self, x0: usize, y0: usize, size: usize) -> Result<TrainSample> {
        if x0 % 2 != 0 || y0 % 2 != 0 || size % 2 != 0 {
            return Err(Error::invalid("training crops must start and end on even pixels"));
        }
        let i = &self.inputs;
        let (hx, hy, hs) = (x0 / 2, y0 / 2, size / 2);
        Ok(TrainSample {
            inputs: FusionInputs {
                source: i.source.crop(x0, y0, size, size)?,
                reference_warped: i.reference_warped.crop(hx, hy, hs, hs)?,
                face_mask: i.face_mask.crop(hx, hy, hs, hs)?,
                occlusion_mask: i.occlusion_mask.crop(hx, hy, hs, hs)?,
            },
            gt: self.gt.crop(x0, y0, size, size)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// The learning rate halves every this many steps.
    pub lr_half_life_steps: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Side of the random square crops; whole samples when absent.
    pub patch_size: Option<usize>,
    /// Probability that a crop is centered on a face pixel.
    pub face_bias: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch_size: 4,
            learning_rate: 1e-3,
            lr_half_life_steps: 2000.0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            patch_size: Some(32),
            face_bias: 0.6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: FusionNetParams<f32>,
    /// Batch-mean loss of every step, measured before that step's update.
    pub history: Vec<LossParts>,
}

/// Loss and exact parameter gradients for one sample.
pub fn gradients<T: Real>(
    params: &FusionNetParams<T>,
    inputs: &FusionInputs,
    gt: &LinearImage,
    cfg: &LossConfig,
) -> Result<(LossParts, FusionNetParams<T>)> {
    inputs.validate(&params.config)?;
    if gt.size() != inputs.source.size() {
        return Err(Error::SizeMismatch {
            what: "ground truth",
            expected: inputs.source.size(),
            actual: gt.size(),
        });
    }
    let (src, stack) = inputs.tensors::<T>();
    let gt_t = Tensor {
        c: 3,
        h: gt.height,
        w: gt.width,
        data: gt.data.iter().map(|&v| T::of(v as f64)).collect(),
    };
    let tape = Tape::run(params, src.clone(), stack);
    let ex = PyramidFeatures {
        levels: cfg.perceptual_layer_weights.len(),
    };
    let (parts, g) = loss_and_grad(tape.output(), &gt_t, &src, cfg, &ex, true);
    let grads = tape.backward(params, g.expect("gradient requested"));
    Ok((parts, grads))
}

fn learning_rate(cfg: &TrainConfig, step: usize) -> f64 {
    cfg.learning_rate * 0.5f64.powf(step as f64 / cfg.lr_half_life_steps)
}

fn draw_crop(sample: &TrainSample, size: usize, face_bias: f64, rng: &mut ChaCha8Rng) -> Result<TrainSample> {
    let (w, h) = sample.gt.size();
    if size > w || size > h {
        return Err(Error::invalid(format!("patch size {size} exceeds sample size {w}x{h}")));
    }
    let (mx, my) = ((w - size) / 2, (h - size) / 2);
    let mask = &sample.inputs.face_mask;
    let use_face = rng.random::<f64>() < face_bias;
    let (x0, y0) = if use_face {
        let face: Vec<usize> = (0..mask.data.len()).filter(|&i| mask.data[i] > 0.5).collect();
        if face.is_empty() {
            (rng.random_range(0..=mx), rng.random_range(0..=my))
        } else {
            let p = face[rng.random_range(0..face.len())];
            let (cx, cy) = (p % mask.width, p / mask.width);
            let half = size / 4;
            (cx.saturating_sub(half).min(mx), cy.saturating_sub(half).min(my))
        }
    } else {
        (rng.random_range(0..=mx), rng.random_range(0..=my))
    };
    sample.crop(2 * x0, 2 * y0, size)
}

/// Adam with exponential learning-rate decay over seeded random crops. The batch
/// gradient is reduced in a fixed order, so results do not depend on thread
/// count.
pub fn train(
    samples: &[TrainSample],
    params: FusionNetParams<f32>,
    loss_cfg: &LossConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    loss_cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::invalid("training needs at least one sample"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::invalid("batch_size must be positive"));
    }
    if !(cfg.lr_half_life_steps > 0.0) || !(cfg.learning_rate >= 0.0) {
        return Err(Error::invalid("learning rate must be non-negative with a positive half-life"));
    }
    if let Some(p) = cfg.patch_size {
        if p % params.config.size_multiple() != 0 || p % 2 != 0 {
            return Err(Error::invalid(format!(
                "patch size {p} must be a multiple of {}",
                params.config.size_multiple().max(2)
            )));
        }
    }
    let mut params = params;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut m = vec![0.0f64; params.len()];
    let mut v = vec![0.0f64; params.len()];
    let mut history = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let s = &samples[rng.random_range(0..samples.len())];
            batch.push(match cfg.patch_size {
                Some(p) => draw_crop(s, p, cfg.face_bias, &mut rng)?,
                None => s.clone(),
            });
        }
        let results: Vec<Result<(LossParts, FusionNetParams<f32>)>> = batch
            .par_iter()
            .map(|s| gradients(&params, &s.inputs, &s.gt, loss_cfg))
            .collect();
        let mut mean = LossParts::default();
        let mut grad = vec![0.0f64; params.len()];
        let k = 1.0 / cfg.batch_size as f64;
        for r in results {
            let (parts, g) = r?;
            mean.total += k * parts.total;
            mean.content += k * parts.content;
            mean.perceptual += k * parts.perceptual;
            mean.color += k * parts.color;
            for (a, &b) in grad.iter_mut().zip(&g.data) {
                *a += k * b as f64;
            }
        }
        if !mean.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged {
                step,
                loss: mean.total,
            });
        }
        let lr = learning_rate(cfg, step);
        let t = (step + 1) as i32;
        let (c1, c2) = (1.0 - cfg.beta1.powi(t), 1.0 - cfg.beta2.powi(t));
        for i in 0..params.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            let update = lr * (m[i] / c1) / ((v[i] / c2).sqrt() + cfg.epsilon);
            params.data[i] = (params.data[i] as f64 - update) as f32;
        }
        if !params.is_finite() {
            return Err(Error::Diverged {
                step,
                loss: mean.total,
            });
        }
        log::debug!(
            "step {step}: total {:.5} content {:.5} perceptual {:.5} color {:.5} lr {lr:.2e}",
            mean.total,
            mean.content,
            mean.perceptual,
            mean.color
        );
        if step % 100 == 0 || step + 1 == cfg.steps {
            log::info!("step {step}/{}: loss {:.5}", cfg.steps, mean.total);
        }
        history.push(mean);
    }
    Ok(TrainOutcome { params, history })
}
