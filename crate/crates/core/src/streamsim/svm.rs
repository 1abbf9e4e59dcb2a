//! Linear SVM that decides whether to stream the UW camera.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_FEATURES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionFeatures {
    /// Mean flow magnitude over the face, px.
    pub avg_face_flow: f64,
    /// Maximum flow magnitude in the frame, px.
    pub max_flow: f64,
    /// Mean gradient magnitude over the face, linear units per px.
    pub avg_face_gradient: f64,
    pub exposure_time_s: f64,
    pub sensor_gain: f64,
}

impl MotionFeatures {
    pub fn to_array(&self) -> [f64; NUM_FEATURES] {
        [
            self.avg_face_flow,
            self.max_flow,
            self.avg_face_gradient,
            self.exposure_time_s,
            self.sensor_gain,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if self.to_array().iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid("motion features must be finite and non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub weights: [f64; NUM_FEATURES],
    pub bias: f64,
    pub feature_means: [f64; NUM_FEATURES],
    pub feature_stds: [f64; NUM_FEATURES],
}

impl SvmModel {
    pub fn standardize(&self, f: &MotionFeatures) -> [f64; NUM_FEATURES] {
        let mut x = f.to_array();
        for (i, v) in x.iter_mut().enumerate() {
            *v = (*v - self.feature_means[i]) / self.feature_stds[i];
        }
        x
    }

    /// Signed distance proxy `w . standardize(f) + b`.
    pub fn decision_function(&self, f: &MotionFeatures) -> f64 {
        let x = self.standardize(f);
        self.weights.iter().zip(&x).map(|(w, v)| w * v).sum::<f64>() + self.bias
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmConfig {
    /// Soft-margin constant; the L2 weight is `1 / (c n)`.
    pub c: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            c: 10.0,
            epochs: 200,
            seed: 0,
        }
    }
}

/// Stochastic subgradient descent on the L2-regularised hinge loss over
/// standardized features (Pegasos step size `1 / (lambda t)`). The bias is
/// not regularised. Returns the average of the iterates over the last half
/// of training.
pub fn svm_train(samples: &[(MotionFeatures, bool)], cfg: &SvmConfig) -> Result<SvmModel> {
    if !(cfg.c > 0.0 && cfg.c.is_finite()) || cfg.epochs == 0 {
        return Err(Error::invalid("SVM needs c > 0 and at least one epoch"));
    }
    for (f, _) in samples {
        f.validate()?;
    }
    let positives = samples.iter().filter(|s| s.1).count();
    if positives == 0 || positives == samples.len() {
        return Err(Error::invalid("SVM training data must contain both classes"));
    }
    let n = samples.len();
    let mut means = [0.0; NUM_FEATURES];
    let mut stds = [0.0; NUM_FEATURES];
    for (f, _) in samples {
        for (m, v) in means.iter_mut().zip(f.to_array()) {
            *m += v / n as f64;
        }
    }
    for (f, _) in samples {
        for (i, v) in f.to_array().iter().enumerate() {
            stds[i] += (v - means[i]).powi(2) / n as f64;
        }
    }
    for s in stds.iter_mut() {
        *s = s.sqrt();
        if !(*s > 1e-12) {
            *s = 1.0;
        }
    }
    let mut model = SvmModel {
        weights: [0.0; NUM_FEATURES],
        bias: 0.0,
        feature_means: means,
        feature_stds: stds,
    };
    let xs: Vec<([f64; NUM_FEATURES], f64)> = samples
        .iter()
        .map(|(f, y)| (model.standardize(f), if *y { 1.0 } else { -1.0 }))
        .collect();
    let lambda = 1.0 / (cfg.c * n as f64);
    let total = cfg.epochs * n;
    let average_from = total / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (mut w, mut b) = ([0.0; NUM_FEATURES], 0.0);
    let (mut w_avg, mut b_avg, mut count) = ([0.0; NUM_FEATURES], 0.0, 0.0);
    for t in 1..=total {
        let (x, y) = &xs[rng.random_range(0..n)];
        let eta = 1.0 / (lambda * t as f64);
        let margin = y * (w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b);
        let shrink = 1.0 - eta * lambda;
        w.iter_mut().for_each(|v| *v *= shrink);
        if margin < 1.0 {
            let step = eta.min(1.0);
            for (wi, xi) in w.iter_mut().zip(x) {
                *wi += eta * y * xi;
            }
            b += step * y;
        }
        if t > average_from {
            count += 1.0;
            for (a, v) in w_avg.iter_mut().zip(&w) {
                *a += (v - *a) / count;
            }
            b_avg += (b - b_avg) / count;
        }
    }
    model.weights = w_avg;
    model.bias = b_avg;
    Ok(model)
}

/// True when the UW camera should stream; ties go to streaming.
pub fn svm_predict(model: &SvmModel, f: &MotionFeatures) -> bool {
    model.decision_function(f) >= 0.0
}

/// Parameters of the synthetic motion-feature generators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MotionGeneratorConfig {
    /// Face flow range (px/frame) of frames that benefit from fusion.
    pub blurry_flow: [f64; 2],
    /// Face flow range of frames that do not.
    pub sharp_flow: [f64; 2],
    /// Gain range of the well-lit captures.
    pub low_gain: [f64; 2],
    /// Gain range of dark scenes, where the UW reference is too noisy.
    pub high_gain: [f64; 2],
}

impl Default for MotionGeneratorConfig {
    fn default() -> Self {
        Self {
            blurry_flow: [3.0, 12.0],
            sharp_flow: [0.0, 1.0],
            low_gain: [1.0, 100.0],
            high_gain: [1000.0, 3200.0],
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    rng.random_range(r[0]..=r[1])
}

/// A frame from the "fusion helps" regime: visible motion, moderate gain.
pub fn positive_features(rng: &mut ChaCha8Rng, g: &MotionGeneratorConfig) -> MotionFeatures {
    let flow = uniform(rng, g.blurry_flow);
    MotionFeatures {
        avg_face_flow: flow,
        max_flow: flow * rng.random_range(1.0..2.0),
        avg_face_gradient: rng.random_range(0.01..0.05),
        exposure_time_s: rng.random_range(1.0 / 60.0..1.0 / 15.0),
        sensor_gain: uniform(rng, g.low_gain),
    }
}

/// A frame from the "fusion does not help" regime: a still face, or a scene
/// so dark that the reference is unusable.
pub fn negative_features(rng: &mut ChaCha8Rng, g: &MotionGeneratorConfig) -> MotionFeatures {
    let still = rng.random_bool(0.5);
    let flow = if still { uniform(rng, g.sharp_flow) } else { uniform(rng, g.blurry_flow) };
    MotionFeatures {
        avg_face_flow: flow,
        max_flow: flow * rng.random_range(1.0..2.0),
        avg_face_gradient: rng.random_range(0.01..0.05),
        exposure_time_s: rng.random_range(1.0 / 60.0..1.0 / 15.0),
        sensor_gain: if still { uniform(rng, g.low_gain) } else { uniform(rng, g.high_gain) },
    }
}

/// `n` labelled samples, alternating classes.
pub fn synthetic_training_set(n: usize, g: &MotionGeneratorConfig, seed: u64) -> Vec<(MotionFeatures, bool)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            if i % 2 == 0 {
                (positive_features(&mut rng, g), true)
            } else {
                (negative_features(&mut rng, g), false)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn accuracy(model: &SvmModel, data: &[(MotionFeatures, bool)]) -> f64 {
        data.iter().filter(|(f, y)| svm_predict(model, f) == *y).count() as f64 / data.len() as f64
    }

    #[test]
    fn separable_set_is_learned() {
        let g = MotionGeneratorConfig::default();
        let train = synthetic_training_set(400, &g, 1);
        let model = svm_train(&train, &SvmConfig::default()).unwrap();
        assert_eq!(accuracy(&model, &train), 1.0);
        let held_out = accuracy(&model, &synthetic_training_set(400, &g, 2));
        assert!(held_out >= 0.98, "{held_out}");
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        assert!(svm_predict(&model, &positive_features(&mut rng, &g)));
    }

    #[test]
    fn flipped_labels_negate_model() {
        let train = synthetic_training_set(200, &MotionGeneratorConfig::default(), 3);
        let flipped: Vec<_> = train.iter().map(|(f, y)| (*f, !y)).collect();
        let a = svm_train(&train, &SvmConfig::default()).unwrap();
        let b = svm_train(&flipped, &SvmConfig::default()).unwrap();
        for (x, y) in a.weights.iter().zip(&b.weights) {
            assert!((x + y).abs() < 1e-3);
        }
        assert!((a.bias + b.bias).abs() < 1e-3);
    }

    #[test]
    fn degenerate_inputs() {
        let f = MotionFeatures {
            avg_face_flow: 1.0,
            max_flow: 2.0,
            avg_face_gradient: 0.1,
            exposure_time_s: 0.03,
            sensor_gain: 50.0,
        };
        let data = vec![(f, true), (f, true), (f, false)];
        let m = svm_train(&data, &SvmConfig::default()).unwrap();
        assert!(m.bias.is_finite() && m.weights.iter().all(|w| w.is_finite()));
        assert!(svm_predict(&m, &f));
        assert!(svm_train(&[(f, true), (f, true)], &SvmConfig::default()).is_err());
    }

    #[test]
    fn boundary_ties_enable_streaming() {
        let m = SvmModel {
            weights: [1.0, 0.0, 0.0, 0.0, 0.0],
            bias: 0.0,
            feature_means: [2.0, 0.0, 0.0, 0.0, 0.0],
            feature_stds: [1.0; 5],
        };
        let f = MotionFeatures {
            avg_face_flow: 2.0,
            max_flow: 0.0,
            avg_face_gradient: 0.0,
            exposure_time_s: 0.0,
            sensor_gain: 0.0,
        };
        assert_eq!(m.decision_function(&f), 0.0);
        assert!(svm_predict(&m, &f));
    }
}
