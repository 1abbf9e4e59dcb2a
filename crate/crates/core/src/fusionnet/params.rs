use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    /// Feature channels per level, finest first; its length is the level count.
    pub channels: Vec<usize>,
    /// Replace every 3x3 convolution by depthwise 3x3 plus pointwise 1x1.
    pub depthwise_separable: bool,
    /// The output is `source + residual_scale * prediction`.
    pub residual_scale: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            channels: vec![8, 16, 32],
            depthwise_separable: false,
            residual_scale: 0.1,
        }
    }
}

impl NetConfig {
    /// The full-size 5-level channel plan.
    pub fn full() -> Self {
        Self {
            channels: vec![16, 32, 64, 128, 256],
            ..Self::default()
        }
    }

    pub fn levels(&self) -> usize {
        self.channels.len()
    }

    /// Spatial sizes must be divisible by this.
    pub fn size_multiple(&self) -> usize {
        1 << (self.levels() - 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.len() < 2 || self.channels.contains(&0) {
            return Err(Error::invalid("network needs at least two levels with positive channel counts"));
        }
        if !(self.residual_scale.is_finite() && self.residual_scale > 0.0) {
            return Err(Error::invalid("residual_scale must be positive and finite"));
        }
        Ok(())
    }
}

/// One convolution of the graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvSpec {
    pub name: String,
    pub ci: usize,
    pub co: usize,
    pub k: usize,
    pub stride: usize,
    pub separable: bool,
}

impl ConvSpec {
    fn new(name: impl Into<String>, ci: usize, co: usize, k: usize, stride: usize, cfg: &NetConfig) -> Self {
        Self {
            name: name.into(),
            ci,
            co,
            k,
            stride,
            separable: cfg.depthwise_separable && k == 3,
        }
    }

    /// Named tensor shapes of this layer, in storage order.
    pub fn tensor_shapes(&self) -> Vec<(String, Vec<usize>)> {
        if self.separable {
            vec![
                (format!("{}.dw", self.name), vec![self.ci, 3, 3]),
                (format!("{}.pw", self.name), vec![self.co, self.ci, 1, 1]),
                (format!("{}.b", self.name), vec![self.co]),
            ]
        } else {
            vec![
                (format!("{}.w", self.name), vec![self.co, self.ci, self.k, self.k]),
                (format!("{}.b", self.name), vec![self.co]),
            ]
        }
    }

    fn fan_in(&self, tensor: usize) -> usize {
        match (self.separable, tensor) {
            (true, 0) => 9,
            (true, _) => self.ci,
            (false, _) => self.ci * self.k * self.k,
        }
    }
}

/// Number of channels in the reference stack: RGB, face mask, occlusion mask.
pub const REFERENCE_CHANNELS: usize = 5;

/// Every convolution in evaluation order.
pub fn conv_specs(cfg: &NetConfig) -> Vec<ConvSpec> {
    let c = &cfg.channels;
    let l = c.len();
    let mut specs = vec![
        ConvSpec::new("enc1", 3, c[0], 3, 1, cfg),
        ConvSpec::new("down1", c[0], c[1], 3, 2, cfg),
        ConvSpec::new("ref1", REFERENCE_CHANNELS, c[0], 3, 1, cfg),
        ConvSpec::new("ref_fuse", c[0], c[1], 1, 1, cfg),
    ];
    for k in 2..l {
        specs.push(ConvSpec::new(format!("enc{k}"), c[k - 1], c[k - 1], 3, 1, cfg));
        specs.push(ConvSpec::new(format!("down{k}"), c[k - 1], c[k], 3, 2, cfg));
    }
    for k in (2..=l).rev() {
        specs.push(ConvSpec::new(format!("dec{k}a"), c[k - 1], c[k - 1], 3, 1, cfg));
        specs.push(ConvSpec::new(format!("dec{k}b"), c[k - 1], c[k - 2], 3, 1, cfg));
    }
    specs.push(ConvSpec::new("dec1", c[0], c[0], 3, 1, cfg));
    specs.push(ConvSpec::new("out", c[0], 3, 3, 1, cfg));
    specs
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

/// Training-time ablations a parameter set was produced with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelVariant {
    pub color_loss: bool,
    /// Training targets carried synthetic highlights.
    pub highlights: bool,
    /// The reference input was present; otherwise it was zeroed.
    pub reference: bool,
}

impl Default for ModelVariant {
    fn default() -> Self {
        Self {
            color_loss: true,
            highlights: true,
            reference: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    config: NetConfig,
    #[serde(default)]
    variant: ModelVariant,
    tensors: Vec<TensorInfo>,
}

/// All weights and biases, laid out as one flat buffer with per-tensor offsets.
/// Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionNetParams<T = f32> {
    pub config: NetConfig,
    pub variant: ModelVariant,
    pub specs: Vec<ConvSpec>,
    pub tensors: Vec<TensorInfo>,
    offsets: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Real> FusionNetParams<T> {
    pub fn zeros(config: &NetConfig) -> Result<Self> {
        config.validate()?;
        let specs = conv_specs(config);
        let mut tensors = Vec::new();
        let mut offsets = vec![0];
        for s in &specs {
            for (name, shape) in s.tensor_shapes() {
                offsets.push(offsets.last().unwrap() + shape.iter().product::<usize>());
                tensors.push(TensorInfo { name, shape });
            }
        }
        let n = *offsets.last().unwrap();
        Ok(Self {
            config: config.clone(),
            variant: ModelVariant::default(),
            specs,
            tensors,
            offsets,
            data: vec![T::zero(); n],
        })
    }

    /// He-normal weights, zero biases, and a zero output layer so the
    /// untrained network is exactly the identity on the source.
    pub fn init(config: &NetConfig, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = 0;
        for spec in p.specs.clone() {
            let count = spec.tensor_shapes().len();
            for j in 0..count {
                let is_bias = j + 1 == count;
                if !is_bias && spec.name != "out" {
                    let std = (2.0 / spec.fan_in(j) as f64).sqrt();
                    let normal = Normal::new(0.0, std).expect("valid std");
                    let (a, b) = (p.offsets[t], p.offsets[t + 1]);
                    for v in &mut p.data[a..b] {
                        *v = T::of(normal.sample(&mut rng));
                    }
                }
                t += 1;
            }
        }
        Ok(p)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            data: vec![T::zero(); self.data.len()],
            ..self.clone()
        }
    }

    pub fn tensor(&self, i: usize) -> &[T] {
        &self.data[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn tensor_range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    pub fn tensor_index(&self, name: &str) -> Option<usize> {
        self.tensors.iter().position(|t| t.name == name)
    }

    /// Index of the first tensor of each layer.
    pub fn layer_starts(&self) -> Vec<usize> {
        let mut starts = Vec::with_capacity(self.specs.len());
        let mut t = 0;
        for s in &self.specs {
            starts.push(t);
            t += s.tensor_shapes().len();
        }
        starts
    }

    pub fn convert<U: Real>(&self) -> FusionNetParams<U> {
        FusionNetParams {
            config: self.config.clone(),
            variant: self.variant,
            specs: self.specs.clone(),
            tensors: self.tensors.clone(),
            offsets: self.offsets.clone(),
            data: self.data.iter().map(|v| U::of(v.f64())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl FusionNetParams<f32> {
    /// Writes the raw little-endian `f32` blob to `path` and the JSON shape
    /// manifest next to it with a `.json` extension.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut blob = Vec::with_capacity(4 * self.data.len());
        for v in &self.data {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(path, blob).map_err(|e| Error::io(path, e))?;
        let manifest = Manifest {
            config: self.config.clone(),
            variant: self.variant,
            tensors: self.tensors.clone(),
        };
        let mpath = path.with_extension("json");
        fs::write(&mpath, serde_json::to_string_pretty(&manifest)? + "\n").map_err(|e| Error::io(&mpath, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mpath = path.with_extension("json");
        let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        let mut p = Self::zeros(&manifest.config)?;
        p.variant = manifest.variant;
        if p.tensors != manifest.tensors {
            return Err(Error::format("params manifest", "tensor shapes do not match the architecture"));
        }
        let blob = fs::read(path).map_err(|e| Error::io(path, e))?;
        if blob.len() != 4 * p.data.len() {
            return Err(Error::format(
                "params blob",
                format!("expected {} bytes, found {}", 4 * p.data.len(), blob.len()),
            ));
        }
        for (v, chunk) in p.data.iter_mut().zip(blob.chunks_exact(4)) {
            *v = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
        }
        if !p.is_finite() {
            return Err(Error::format("params blob", "contains non-finite values"));
        }
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_layout() {
        let p = FusionNetParams::<f32>::zeros(&NetConfig::default()).unwrap();
        let names: Vec<_> = p.specs.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(
            names,
            ["enc1", "down1", "ref1", "ref_fuse", "enc2", "down2", "dec3a", "dec3b", "dec2a", "dec2b", "dec1", "out"]
        );
        assert_eq!(p.tensors.len(), 24);
        assert_eq!(p.config.size_multiple(), 4);
    }

    #[test]
    fn full_plan_has_five_levels() {
        let p = FusionNetParams::<f32>::zeros(&NetConfig::full()).unwrap();
        assert_eq!(p.config.size_multiple(), 16);
        let bottom = p.tensor_index("dec5a.w").unwrap();
        assert_eq!(p.tensors[bottom].shape, vec![256, 256, 3, 3]);
    }

    #[test]
    fn init_zeroes_output_layer() {
        let p = FusionNetParams::<f32>::init(&NetConfig::default(), 1).unwrap();
        let out = p.tensor_index("out.w").unwrap();
        assert!(p.tensor(out).iter().all(|&v| v == 0.0));
        let enc = p.tensor_index("enc1.w").unwrap();
        assert!(p.tensor(enc).iter().any(|&v| v != 0.0));
        assert_eq!(p, FusionNetParams::<f32>::init(&NetConfig::default(), 1).unwrap());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = NetConfig {
            channels: vec![4, 6],
            depthwise_separable: true,
            residual_scale: 0.5,
        };
        let mut p = FusionNetParams::<f32>::init(&cfg, 3).unwrap();
        p.variant.highlights = false;
        let path = dir.path().join("params.bin");
        p.save(&path).unwrap();
        assert_eq!(FusionNetParams::load(&path).unwrap(), p);
        fs::write(&path, [0u8; 8]).unwrap();
        assert!(FusionNetParams::load(&path).is_err());
    }
}
