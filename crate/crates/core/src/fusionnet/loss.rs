use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::{gaussian_blur_plane, gaussian_blur_plane_adjoint};
use crate::real::Real;

use super::ops::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub w_content: f64,
    pub w_vgg: f64,
    pub w_color: f64,
    pub color_sigma: f64,
    /// One weight per feature-pyramid level.
    pub perceptual_layer_weights: Vec<f64>,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            w_content: 1.0,
            w_vgg: 2.0,
            w_color: 1.0,
            color_sigma: 20.0,
            perceptual_layer_weights: vec![1.0 / 2.6, 1.0 / 4.8, 1.0 / 3.7, 1.0 / 5.6, 10.0 / 1.5],
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [self.w_content, self.w_vgg, self.w_color, self.color_sigma];
        if weights.iter().chain(&self.perceptual_layer_weights).any(|w| !(*w >= 0.0)) {
            return Err(Error::invalid("loss weights must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub content: f64,
    pub perceptual: f64,
    pub color: f64,
}

/// Linear multi-level feature map used by the perceptual term.
pub trait FeatureExtractor {
    /// Feature vectors, one per level.
    fn extract<T: Real>(&self, img: &Tensor<T>) -> Vec<Vec<T>>;
    /// Gradient w.r.t. the image of `sum_j <grads_j, features_j>`.
    fn backward<T: Real>(&self, c: usize, h: usize, w: usize, grads: &[Vec<T>]) -> Tensor<T>;
}

/// Band-pass luminance pyramid: for each level, `[L - blockmean(L), dL/dx, dL/dy]`
/// where the block mean is over the 2x2 cell of the next level and the
/// differences are zero in the last column/row. No feature responds to a
/// constant offset.
#[derive(Debug, Clone, Copy)]
pub struct PyramidFeatures {
    pub levels: usize,
}

const LUMA: [f64; 3] = [0.2126, 0.7152, 0.0722];

fn box_down<T: Real>(p: &[T], w: usize, h: usize) -> (Vec<T>, usize, usize) {
    let (nw, nh) = (w.div_ceil(2), h.div_ceil(2));
    let q = T::of(0.25);
    let mut out = Vec::with_capacity(nw * nh);
    for y in 0..nh {
        let (y0, y1) = (2 * y, (2 * y + 1).min(h - 1));
        for x in 0..nw {
            let (x0, x1) = (2 * x, (2 * x + 1).min(w - 1));
            out.push(q * (p[y0 * w + x0] + p[y0 * w + x1] + p[y1 * w + x0] + p[y1 * w + x1]));
        }
    }
    (out, nw, nh)
}

fn box_down_adjoint<T: Real>(g: &[T], w: usize, h: usize) -> Vec<T> {
    let (nw, nh) = (w.div_ceil(2), h.div_ceil(2));
    let q = T::of(0.25);
    let mut out = vec![T::zero(); w * h];
    for y in 0..nh {
        let (y0, y1) = (2 * y, (2 * y + 1).min(h - 1));
        for x in 0..nw {
            let (x0, x1) = (2 * x, (2 * x + 1).min(w - 1));
            let v = q * g[y * nw + x];
            out[y0 * w + x0] += v;
            out[y0 * w + x1] += v;
            out[y1 * w + x0] += v;
            out[y1 * w + x1] += v;
        }
    }
    out
}

impl FeatureExtractor for PyramidFeatures {
    fn extract<T: Real>(&self, img: &Tensor<T>) -> Vec<Vec<T>> {
        let (mut w, mut h) = (img.w, img.h);
        let n = w * h;
        let mut lum = vec![T::zero(); n];
        for (c, &k) in LUMA.iter().enumerate().take(img.c) {
            let k = T::of(k);
            for (l, &v) in lum.iter_mut().zip(img.plane(c)) {
                *l += k * v;
            }
        }
        let mut feats = Vec::with_capacity(self.levels);
        for level in 0..self.levels {
            if level > 0 {
                let (d, nw, nh) = box_down(&lum, w, h);
                (lum, w, h) = (d, nw, nh);
            }
            let mut f = Vec::with_capacity(3 * w * h);
            let (coarse, cw, _) = box_down(&lum, w, h);
            for y in 0..h {
                for x in 0..w {
                    f.push(lum[y * w + x] - coarse[(y / 2) * cw + x / 2]);
                }
            }
            for y in 0..h {
                for x in 0..w {
                    f.push(if x + 1 < w { lum[y * w + x + 1] - lum[y * w + x] } else { T::zero() });
                }
            }
            for y in 0..h {
                for x in 0..w {
                    f.push(if y + 1 < h { lum[(y + 1) * w + x] - lum[y * w + x] } else { T::zero() });
                }
            }
            feats.push(f);
        }
        feats
    }

    fn backward<T: Real>(&self, c: usize, h0: usize, w0: usize, grads: &[Vec<T>]) -> Tensor<T> {
        let mut sizes = vec![(w0, h0)];
        for _ in 1..self.levels {
            let (w, h) = *sizes.last().unwrap();
            sizes.push((w.div_ceil(2), h.div_ceil(2)));
        }
        // Walk from the coarsest level back up, folding each level's feature
        // gradient into the luminance gradient of that level.
        let mut carry: Option<Vec<T>> = None;
        for level in (0..self.levels).rev() {
            let (w, h) = sizes[level];
            let n = w * h;
            let g = &grads[level];
            let mut gl = match carry.take() {
                Some(up) => box_down_adjoint(&up, w, h),
                None => vec![T::zero(); n],
            };
            let (cw, ch) = (w.div_ceil(2), h.div_ceil(2));
            let mut block = vec![T::zero(); cw * ch];
            for y in 0..h {
                for x in 0..w {
                    gl[y * w + x] += g[y * w + x];
                    block[(y / 2) * cw + x / 2] += g[y * w + x];
                }
            }
            for (a, b) in gl.iter_mut().zip(box_down_adjoint(&block, w, h)) {
                *a -= b;
            }
            for y in 0..h {
                for x in 0..w.saturating_sub(1) {
                    let v = g[n + y * w + x];
                    gl[y * w + x + 1] += v;
                    gl[y * w + x] -= v;
                }
            }
            for y in 0..h.saturating_sub(1) {
                for x in 0..w {
                    let v = g[2 * n + y * w + x];
                    gl[(y + 1) * w + x] += v;
                    gl[y * w + x] -= v;
                }
            }
            carry = Some(gl);
        }
        let gl = carry.unwrap_or_default();
        let mut out = Tensor::zeros(c, h0, w0);
        for (ch, &k) in LUMA.iter().enumerate().take(c) {
            let k = T::of(k);
            for (o, &g) in out.plane_mut(ch).iter_mut().zip(&gl) {
                *o = k * g;
            }
        }
        out
    }
}

#[inline]
fn sign<T: Real>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// Loss value and, when `grad` is set, its gradient w.r.t. `out`.
pub fn loss_and_grad<T: Real, F: FeatureExtractor>(
    out: &Tensor<T>,
    gt: &Tensor<T>,
    src: &Tensor<T>,
    cfg: &LossConfig,
    extractor: &F,
    grad: bool,
) -> (LossParts, Option<Tensor<T>>) {
    assert!(out.same_shape(gt) && out.same_shape(src), "loss inputs must share a shape");
    let n = out.data.len() as f64;
    let mut g = grad.then(|| Tensor::zeros(out.c, out.h, out.w));

    let mut content = 0.0;
    let kc = T::of(cfg.w_content / n);
    for (i, (&o, &t)) in out.data.iter().zip(&gt.data).enumerate() {
        content += (o - t).abs().f64();
        if let Some(g) = g.as_mut() {
            g.data[i] += kc * sign(o - t);
        }
    }
    content /= n;

    let mut perceptual = 0.0;
    if cfg.w_vgg > 0.0 && !cfg.perceptual_layer_weights.is_empty() {
        let diff = Tensor {
            data: out.data.iter().zip(&gt.data).map(|(&a, &b)| a - b).collect(),
            ..out.clone()
        };
        let feats = extractor.extract(&diff);
        let mut fgrads = Vec::with_capacity(feats.len());
        for (f, &wj) in feats.iter().zip(&cfg.perceptual_layer_weights) {
            let m = f.len() as f64;
            perceptual += wj * f.iter().map(|v| v.abs().f64()).sum::<f64>() / m;
            let k = T::of(cfg.w_vgg * wj / m);
            fgrads.push(f.iter().map(|&v| k * sign(v)).collect::<Vec<T>>());
        }
        if let Some(g) = g.as_mut() {
            let back = extractor.backward(out.c, out.h, out.w, &fgrads);
            for (a, &b) in g.data.iter_mut().zip(&back.data) {
                *a += b;
            }
        }
    }

    let mut color = 0.0;
    if cfg.w_color > 0.0 {
        let kc = T::of(cfg.w_color / n);
        for c in 0..out.c {
            let go = gaussian_blur_plane(out.plane(c), out.w, out.h, cfg.color_sigma);
            let gs = gaussian_blur_plane(src.plane(c), out.w, out.h, cfg.color_sigma);
            let mut s = Vec::with_capacity(go.len());
            for (&a, &b) in go.iter().zip(&gs) {
                color += (a - b).abs().f64();
                s.push(kc * sign(a - b));
            }
            if let Some(g) = g.as_mut() {
                let back = gaussian_blur_plane_adjoint(&s, out.w, out.h, cfg.color_sigma);
                for (a, &b) in g.plane_mut(c).iter_mut().zip(&back) {
                    *a += b;
                }
            }
        }
        color /= n;
    }

    let total = cfg.w_content * content + cfg.w_vgg * perceptual + cfg.w_color * color;
    (
        LossParts {
            total,
            content,
            perceptual,
            color,
        },
        g,
    )
}

/// Loss with the default feature pyramid.
pub fn loss<T: Real>(out: &Tensor<T>, gt: &Tensor<T>, src: &Tensor<T>, cfg: &LossConfig) -> LossParts {
    let ex = PyramidFeatures {
        levels: cfg.perceptual_layer_weights.len(),
    };
    loss_and_grad(out, gt, src, cfg, &ex, false).0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(h: usize, w: usize, seed: u64) -> Tensor<f64> {
        let mut s = seed;
        let data = (0..3 * h * w)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (s >> 11) as f64 / (1u64 << 53) as f64
            })
            .collect();
        Tensor { c: 3, h, w, data }
    }

    #[test]
    fn equal_images_have_zero_loss() {
        let a = img(16, 16, 1);
        let parts = loss(&a, &a, &a, &LossConfig::default());
        assert_eq!(parts, LossParts::default());
    }

    #[test]
    fn constant_offset() {
        let gt = img(24, 20, 2);
        let out = Tensor {
            data: gt.data.iter().map(|v| v + 0.1).collect(),
            ..gt.clone()
        };
        let parts = loss(&out, &gt, &gt, &LossConfig::default());
        assert!((parts.content - 0.1).abs() < 1e-12);
        assert!((parts.color - 0.1).abs() < 1e-9);
    }

    #[test]
    fn perceptual_weight_is_linear() {
        let (a, b) = (img(16, 16, 3), img(16, 16, 4));
        let one = loss(&a, &b, &b, &LossConfig::default());
        let two = loss(
            &a,
            &b,
            &b,
            &LossConfig {
                w_vgg: 4.0,
                ..LossConfig::default()
            },
        );
        let delta = two.total - one.total;
        assert!((delta - 2.0 * one.perceptual).abs() < 1e-12);
    }

    #[test]
    fn content_gradient_is_sign_over_count() {
        let (a, b) = (img(8, 8, 5), img(8, 8, 6));
        let cfg = LossConfig {
            w_vgg: 0.0,
            w_color: 0.0,
            ..LossConfig::default()
        };
        let ex = PyramidFeatures { levels: 5 };
        let (_, g) = loss_and_grad(&a, &b, &b, &cfg, &ex, true);
        let n = a.data.len() as f64;
        for ((ga, x), y) in g.unwrap().data.iter().zip(&a.data).zip(&b.data) {
            assert_eq!(*ga, (x - y).signum() / n);
        }
    }

    #[test]
    fn feature_adjoint() {
        let ex = PyramidFeatures { levels: 4 };
        for (h, w) in [(16, 16), (9, 13)] {
            let x = img(h, w, 7);
            let f = ex.extract(&x);
            let g: Vec<Vec<f64>> = f.iter().enumerate().map(|(j, v)| (0..v.len()).map(|i| ((i * 7 + j) % 5) as f64 - 2.0).collect()).collect();
            let lhs: f64 = f.iter().zip(&g).map(|(a, b)| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>()).sum();
            let gx = ex.backward(3, h, w, &g);
            let rhs: f64 = x.data.iter().zip(&gx.data).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-9, "{lhs} vs {rhs}");
        }
    }
}
