use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest kernel side, and the largest allowed nonzero support.
pub const MAX_KERNEL_SIZE: usize = 151;
pub const MAX_SUPPORT: f64 = 150.0;

/// Velocity memory of the trajectory random walk.
const INERTIA: f64 = 0.9;
/// Per-sample acceleration standard deviation at nonlinearity 1 (unit speed).
const ACCEL_SIGMA: f64 = 0.05;

/// Square, normalized, non-negative blur kernel with odd side length.
#[derive(Debug, Clone, PartialEq)]
pub struct BlurKernel {
    pub size: usize,
    pub weights: Vec<f32>,
}

impl BlurKernel {
    pub fn identity() -> Self {
        Self {
            size: 1,
            weights: vec![1.0],
        }
    }

    pub fn from_weights(size: usize, weights: Vec<f32>) -> Result<Self> {
        if size % 2 == 0 || size > MAX_KERNEL_SIZE || weights.len() != size * size {
            return Err(Error::invalid(format!("kernel must be odd-sized <= {MAX_KERNEL_SIZE}")));
        }
        if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::invalid("kernel weights must be finite and non-negative"));
        }
        let k = Self { size, weights };
        if (k.sum() - 1.0).abs() > 1e-5 {
            return Err(Error::invalid(format!("kernel sums to {}", k.sum())));
        }
        Ok(k)
    }

    /// Horizontal box of odd `width` (a 1-row kernel padded to a square).
    pub fn horizontal_box(width: usize) -> Self {
        assert!(width % 2 == 1);
        let mut weights = vec![0.0; width * width];
        let row = width / 2;
        for x in 0..width {
            weights[row * width + x] = 1.0 / width as f32;
        }
        Self { size: width, weights }
    }

    pub fn radius(&self) -> usize {
        self.size / 2
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().map(|&w| w as f64).sum()
    }

    /// Width and height of the bounding box of nonzero weights.
    pub fn support(&self) -> (usize, usize) {
        let (mut x0, mut x1, mut y0, mut y1) = (usize::MAX, 0, usize::MAX, 0);
        for y in 0..self.size {
            for x in 0..self.size {
                if self.weights[y * self.size + x] > 0.0 {
                    x0 = x0.min(x);
                    x1 = x1.max(x);
                    y0 = y0.min(y);
                    y1 = y1.max(y);
                }
            }
        }
        if x0 == usize::MAX {
            (0, 0)
        } else {
            (x1 - x0 + 1, y1 - y0 + 1)
        }
    }

    /// Nonzero taps as `(dx, dy, weight)` offsets from the kernel center.
    pub fn taps(&self) -> Vec<(isize, isize, f32)> {
        let r = self.radius() as isize;
        let mut out = Vec::new();
        for y in 0..self.size {
            for x in 0..self.size {
                let w = self.weights[y * self.size + x];
                if w > 0.0 {
                    out.push((x as isize - r, y as isize - r, w));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryConfig {
    pub num_samples: usize,
    /// 0 draws straight lines, 1 strongly curved paths.
    pub nonlinearity: f64,
    /// Bound on the kernel's nonzero support along either axis.
    pub max_extent_px: f64,
    pub rng_seed: u64,
    /// Initial direction of motion in radians; random when absent.
    #[serde(default)]
    pub initial_angle: Option<f64>,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self {
            num_samples: 2000,
            nonlinearity: 0.5,
            max_extent_px: 31.0,
            rng_seed: 0,
            initial_angle: None,
        }
    }
}

impl TrajectoryConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.nonlinearity) {
            return Err(Error::invalid("nonlinearity must lie in [0, 1]"));
        }
        if !(0.0..=MAX_SUPPORT).contains(&self.max_extent_px) {
            return Err(Error::invalid("max_extent_px must lie in [0, 150]"));
        }
        if self.num_samples == 0 {
            return Err(Error::invalid("num_samples must be positive"));
        }
        Ok(())
    }
}

/// Random 2-D camera path: unit-speed motion with inertia, perturbed by
/// Gaussian accelerations whose size follows the nonlinearity.
pub fn sample_trajectory(cfg: &TrajectoryConfig) -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let angle = cfg
        .initial_angle
        .unwrap_or_else(|| rng.random::<f64>() * std::f64::consts::TAU);
    let sigma = ACCEL_SIGMA * cfg.nonlinearity;
    let mut v = [angle.cos(), angle.sin()];
    let mut p = [0.0, 0.0];
    let mut path = Vec::with_capacity(cfg.num_samples);
    for _ in 0..cfg.num_samples {
        path.push(p);
        let speed = (v[0] * v[0] + v[1] * v[1]).sqrt().max(1e-12);
        let ax: f64 = rng.sample(StandardNormal);
        let ay: f64 = rng.sample(StandardNormal);
        v = [
            INERTIA * v[0] + (1.0 - INERTIA) * v[0] / speed + sigma * ax,
            INERTIA * v[1] + (1.0 - INERTIA) * v[1] / speed + sigma * ay,
        ];
        p = [p[0] + v[0], p[1] + v[1]];
    }
    path
}

/// Rasterizes a sampled trajectory into a normalized kernel by bilinear
/// splatting of uniform time samples, centered on the path's center of mass.
pub fn sample_trajectory_kernel(cfg: &TrajectoryConfig) -> Result<BlurKernel> {
    cfg.validate()?;
    // Bilinear splatting touches up to two pixels more than the path spans.
    let target = cfg.max_extent_px.floor() - 2.0;
    if target <= 0.0 {
        return Ok(BlurKernel::identity());
    }
    let mut path = sample_trajectory(cfg);
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in &path {
        for a in 0..2 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let extent = (hi[0] - lo[0]).max(hi[1] - lo[1]);
    if extent < 1e-12 {
        return Ok(BlurKernel::identity());
    }
    let scale = target / extent;
    let half = (MAX_KERNEL_SIZE / 2) as f64;
    let n = path.len() as f64;
    let mut center = [0.0; 2];
    for p in path.iter_mut() {
        for a in 0..2 {
            p[a] = (p[a] - lo[a]) * scale;
            center[a] += p[a] / n;
        }
    }
    // Keep the whole path within the largest allowed kernel.
    for a in 0..2 {
        let span = (hi[a] - lo[a]) * scale;
        center[a] = center[a].clamp(span - half, half);
    }
    let mut radius = 0.0f64;
    for p in path.iter_mut() {
        for a in 0..2 {
            p[a] -= center[a];
            radius = radius.max(p[a].abs());
        }
    }
    let r = (radius.ceil() as usize).min(MAX_KERNEL_SIZE / 2);
    let size = 2 * r + 1;
    let mut acc = vec![0.0f64; size * size];
    let w = 1.0 / n;
    for p in &path {
        let x = (p[0] + r as f64).clamp(0.0, (size - 1) as f64);
        let y = (p[1] + r as f64).clamp(0.0, (size - 1) as f64);
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        let x1 = (x0 + 1).min(size - 1);
        let y1 = (y0 + 1).min(size - 1);
        acc[y0 * size + x0] += w * (1.0 - fx) * (1.0 - fy);
        acc[y0 * size + x1] += w * fx * (1.0 - fy);
        acc[y1 * size + x0] += w * (1.0 - fx) * fy;
        acc[y1 * size + x1] += w * fx * fy;
    }
    let total: f64 = acc.iter().sum();
    let weights = acc.into_iter().map(|v| (v / total) as f32).collect();
    Ok(BlurKernel { size, weights })
}
