//! Dense flow between source and reference, warping, and forward-backward
//! occlusion masking.

mod lk;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::{decode_pfm, downsample2x, encode_pfm, resample_plane, sample_bilinear, LinearImage, MaskImage};

pub use lk::PyramidalLk;

/// Per-pixel displacement at some fraction `scale` of the source resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    pub scale: f64,
    pub u: Vec<f32>,
    pub v: Vec<f32>,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize, scale: f64) -> Self {
        Self::constant(width, height, scale, 0.0, 0.0)
    }

    pub fn constant(width: usize, height: usize, scale: f64, u: f32, v: f32) -> Self {
        Self {
            width,
            height,
            scale,
            u: vec![u; width * height],
            v: vec![v; width * height],
        }
    }

    pub fn size(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn get(&self, x: usize, y: usize) -> (f32, f32) {
        let i = y * self.width + x;
        (self.u[i], self.v[i])
    }

    /// Largest displacement magnitude.
    pub fn max_magnitude(&self) -> f32 {
        self.u
            .iter()
            .zip(&self.v)
            .map(|(u, v)| (u * u + v * v).sqrt())
            .fold(0.0, f32::max)
    }

    pub fn mean(&self) -> (f64, f64) {
        let n = self.u.len() as f64;
        (
            self.u.iter().map(|&x| x as f64).sum::<f64>() / n,
            self.v.iter().map(|&x| x as f64).sum::<f64>() / n,
        )
    }

    pub fn validate(&self, max_displacement: f32) -> Result<()> {
        if self.u.len() != self.width * self.height || self.v.len() != self.u.len() {
            return Err(Error::invalid("flow planes do not match the flow size"));
        }
        if self.u.iter().chain(&self.v).any(|x| !x.is_finite()) {
            return Err(Error::invalid("flow contains non-finite values"));
        }
        let m = self.max_magnitude();
        if m > max_displacement {
            return Err(Error::invalid(format!("flow magnitude {m} exceeds {max_displacement}")));
        }
        Ok(())
    }

    pub fn negated(&self) -> Self {
        Self {
            u: self.u.iter().map(|x| -x).collect(),
            v: self.v.iter().map(|x| -x).collect(),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowEstimatorConfig {
    pub pyramid_levels: usize,
    pub iterations_per_level: usize,
    /// Inputs are box-downsampled by this power of two before estimation.
    pub downsample_factor_for_estimation: usize,
    /// Side of the square blocks solved independently at each level.
    pub block_size: usize,
    /// Integer search radius of the global translation search at the coarsest level.
    pub coarse_search_px: usize,
    /// Damping added to each block's normal equations.
    pub regularization: f64,
    /// Bound on |flow| as a fraction of the larger estimation-image side.
    pub max_displacement_frac: f64,
}

impl Default for FlowEstimatorConfig {
    fn default() -> Self {
        Self {
            pyramid_levels: 5,
            iterations_per_level: 6,
            downsample_factor_for_estimation: 4,
            block_size: 8,
            coarse_search_px: 5,
            regularization: 1e-3,
            max_displacement_frac: 0.5,
        }
    }
}

impl FlowEstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        let f = self.downsample_factor_for_estimation;
        if self.pyramid_levels == 0 {
            return Err(Error::invalid("pyramid_levels must be at least 1"));
        }
        if f == 0 || !f.is_power_of_two() {
            return Err(Error::invalid("downsample factor must be a power of two"));
        }
        if self.block_size < 2 || !(self.regularization >= 0.0) || !(self.max_displacement_frac > 0.0) {
            return Err(Error::invalid("invalid flow estimator block size, damping or bound"));
        }
        Ok(())
    }
}

/// Flow between two luminance planes of equal size, such that
/// `a(x) ~ b(x + F(x))`.
pub trait FlowEstimator {
    fn estimate(&self, a: &[f32], b: &[f32], w: usize, h: usize) -> Result<(Vec<f32>, Vec<f32>)>;
}

fn luminance_at_factor(img: &LinearImage, factor: usize) -> LinearImage {
    let mut cur = img.clone();
    let mut f = factor;
    while f > 1 {
        cur = downsample2x(&cur);
        f /= 2;
    }
    cur
}

/// Flow that warps `b` onto `a`, estimated on luminance at the configured
/// reduced resolution; the result stays at that resolution.
pub fn estimate_flow(a: &LinearImage, b: &LinearImage, cfg: &FlowEstimatorConfig) -> Result<FlowField> {
    cfg.validate()?;
    if a.size() != b.size() {
        return Err(Error::SizeMismatch {
            what: "flow inputs",
            expected: a.size(),
            actual: b.size(),
        });
    }
    let factor = cfg.downsample_factor_for_estimation;
    let small_a = luminance_at_factor(a, factor);
    let small_b = luminance_at_factor(b, factor);
    let (w, h) = small_a.size();
    let est = PyramidalLk::new(cfg.clone());
    let (u, v) = est.estimate(&small_a.luminance(), &small_b.luminance(), w, h)?;
    let flow = FlowField {
        width: w,
        height: h,
        scale: w as f64 / a.width as f64,
        u,
        v,
    };
    flow.validate(cfg.max_displacement_frac as f32 * w.max(h) as f32 + 1e-3)?;
    Ok(flow)
}

/// Resizes a flow field, scaling displacements by the size ratio.
pub fn resize_flow(f: &FlowField, to_w: usize, to_h: usize) -> Result<FlowField> {
    if to_w == 0 || to_h == 0 {
        return Err(Error::invalid("flow target size must be positive"));
    }
    let rx = to_w as f32 / f.width as f32;
    let ry = to_h as f32 / f.height as f32;
    let u = resample_plane(&f.u, f.width, f.height, to_w, to_h);
    let v = resample_plane(&f.v, f.width, f.height, to_w, to_h);
    Ok(FlowField {
        width: to_w,
        height: to_h,
        scale: f.scale * to_w as f64 / f.width as f64,
        u: u.into_iter().map(|x| x * rx).collect(),
        v: v.into_iter().map(|x| x * ry).collect(),
    })
}

pub fn upsample_flow(f: &FlowField, to_w: usize, to_h: usize) -> Result<FlowField> {
    if to_w < f.width || to_h < f.height {
        return Err(Error::invalid(format!(
            "cannot upsample a {}x{} flow to {to_w}x{to_h}",
            f.width, f.height
        )));
    }
    resize_flow(f, to_w, to_h)
}

fn check_flow_size(f: &FlowField, w: usize, h: usize) -> Result<()> {
    if f.size() != (w, h) {
        return Err(Error::SizeMismatch {
            what: "flow field",
            expected: (w, h),
            actual: f.size(),
        });
    }
    Ok(())
}

pub fn warp_plane(plane: &[f32], w: usize, h: usize, f: &FlowField) -> Vec<f32> {
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            out.push(sample_bilinear(plane, w, h, x as f32 + f.u[i], y as f32 + f.v[i]));
        }
    }
    out
}

/// Backward warp `out(x) = img(x + f(x))` with edge clamping.
pub fn warp(img: &LinearImage, f: &FlowField) -> Result<LinearImage> {
    check_flow_size(f, img.width, img.height)?;
    let mut data = Vec::with_capacity(img.data.len());
    for c in 0..3 {
        data.extend(warp_plane(img.plane(c), img.width, img.height, f));
    }
    LinearImage::from_planes(img.width, img.height, data)
}

/// `min(s * |F_fwd(x) + F_bwd(x + F_fwd(x))|, 1)`: the distance a pixel ends up
/// from its start after a forward then backward trip, scaled and clipped.
pub fn occlusion_mask(f_fwd: &FlowField, f_bwd: &FlowField, s: f32) -> Result<MaskImage> {
    check_flow_size(f_bwd, f_fwd.width, f_fwd.height)?;
    if !(s >= 0.0) {
        return Err(Error::invalid("occlusion strength must be non-negative"));
    }
    let (w, h) = f_fwd.size();
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (u, v) = f_fwd.get(x, y);
            let (px, py) = (x as f32 + u, y as f32 + v);
            let bu = sample_bilinear(&f_bwd.u, w, h, px, py);
            let bv = sample_bilinear(&f_bwd.v, w, h, px, py);
            let (dx, dy) = (u + bu, v + bv);
            let d = (dx * dx + dy * dy).sqrt();
            data.push((s * d).min(1.0));
        }
    }
    MaskImage::from_data(w, h, data)
}

#[derive(Serialize, Deserialize)]
struct FlowSidecar {
    width: usize,
    height: usize,
    scale: f64,
}

/// Writes `u, v` as the first two channels of a PFM plus a `.json` sidecar
/// holding the resolution scale.
pub fn write_flow(path: &Path, f: &FlowField) -> Result<()> {
    let mut planar = Vec::with_capacity(3 * f.u.len());
    planar.extend_from_slice(&f.u);
    planar.extend_from_slice(&f.v);
    planar.extend(std::iter::repeat_n(0.0, f.u.len()));
    fs::write(path, encode_pfm(f.width, f.height, 3, &planar)).map_err(|e| Error::io(path, e))?;
    let side = path.with_extension("json");
    let json = serde_json::to_string_pretty(&FlowSidecar {
        width: f.width,
        height: f.height,
        scale: f.scale,
    })?;
    fs::write(&side, json + "\n").map_err(|e| Error::io(&side, e))
}

pub fn read_flow(path: &Path) -> Result<FlowField> {
    let pfm = decode_pfm(&fs::read(path).map_err(|e| Error::io(path, e))?)?;
    if pfm.channels != 3 {
        return Err(Error::format("PFM", "flow must be stored as a 3-channel PFM"));
    }
    let side = path.with_extension("json");
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let meta: FlowSidecar = serde_json::from_str(&text)?;
    if (meta.width, meta.height) != (pfm.width, pfm.height) {
        return Err(Error::format("flow sidecar", "size disagrees with the PFM"));
    }
    let n = pfm.width * pfm.height;
    Ok(FlowField {
        width: pfm.width,
        height: pfm.height,
        scale: meta.scale,
        u: pfm.data[..n].to_vec(),
        v: pfm.data[n..2 * n].to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(w: usize, h: usize) -> LinearImage {
        LinearImage::from_fn(w, h, |x, y| [x as f32, 0.5 * x as f32 + y as f32, 2.0])
    }

    #[test]
    fn constant_flow_scales_up() {
        let f = FlowField::constant(8, 6, 0.25, 2.0, 3.0);
        let up = upsample_flow(&f, 32, 24).unwrap();
        assert!(up.u.iter().all(|&u| u == 8.0));
        assert!(up.v.iter().all(|&v| v == 12.0));
        assert_eq!(up.scale, 1.0);
        let z = upsample_flow(&FlowField::zeros(3, 3, 0.5), 17, 9).unwrap();
        assert!(z.u.iter().chain(&z.v).all(|&x| x == 0.0));
    }

    #[test]
    fn ramp_flow_is_preserved() {
        // u(x) = 0.1 * x at the coarse grid; the fine field should equal the
        // same physical ramp (in fine pixels) away from the borders.
        let (w, h) = (16, 12);
        let mut f = FlowField::zeros(w, h, 0.25);
        for y in 0..h {
            for x in 0..w {
                f.u[y * w + x] = 0.1 * x as f32;
                f.v[y * w + x] = 0.05 * y as f32;
            }
        }
        let up = upsample_flow(&f, 4 * w, 4 * h).unwrap();
        for y in 4..4 * h - 4 {
            for x in 4..4 * w - 4 {
                let cx = (x as f32 + 0.5) / 4.0 - 0.5;
                let cy = (y as f32 + 0.5) / 4.0 - 0.5;
                let (u, v) = up.get(x, y);
                assert!((u - 0.4 * cx).abs() < 1e-5);
                assert!((v - 0.2 * cy).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn downsizing_rejected() {
        assert!(upsample_flow(&FlowField::zeros(8, 8, 1.0), 4, 8).is_err());
    }

    #[test]
    fn zero_flow_warp_is_identity() {
        let img = ramp(9, 7);
        assert_eq!(warp(&img, &FlowField::zeros(9, 7, 1.0)).unwrap(), img);
    }

    #[test]
    fn unit_flow_shifts_ramp() {
        let img = ramp(12, 5);
        let out = warp(&img, &FlowField::constant(12, 5, 1.0, 1.0, 0.0)).unwrap();
        for y in 0..5 {
            for x in 0..11 {
                assert!((out.get(0, x, y) - (x as f32 + 1.0)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn inverse_warp_round_trips() {
        let (w, h) = (64, 64);
        let img = LinearImage::from_fn(w, h, |x, y| {
            let (fx, fy) = (x as f32 / 64.0, y as f32 / 64.0);
            let v = 0.5 + 0.3 * (6.0 * fx).sin() * (4.0 * fy).cos();
            [v, 0.5 * v, 1.0 - 0.5 * v]
        });
        let mut f = FlowField::zeros(w, h, 1.0);
        for y in 0..h {
            for x in 0..w {
                f.u[y * w + x] = 0.6 * (x as f32 / 20.0).sin();
                f.v[y * w + x] = 0.4 * (y as f32 / 25.0).cos();
            }
        }
        let back = warp(&warp(&img, &f).unwrap(), &f.negated()).unwrap();
        let mut se = 0.0;
        let mut n = 0;
        for c in 0..3 {
            for y in 4..h - 4 {
                for x in 4..w - 4 {
                    se += (back.get(c, x, y) - img.get(c, x, y)).powi(2) as f64;
                    n += 1;
                }
            }
        }
        let psnr = 10.0 * (1.0 / (se / n as f64)).log10();
        assert!(psnr > 40.0, "psnr {psnr}");
    }

    #[test]
    fn consistent_flows_have_no_occlusion() {
        let f = FlowField::constant(20, 10, 1.0, 1.7, -0.3);
        let m = occlusion_mask(&f, &f.negated(), 2.0).unwrap();
        assert!(m.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_sided_flow_gives_its_length() {
        for d in [0.25f32, 0.8, 3.0] {
            let fwd = FlowField::constant(30, 8, 1.0, d, 0.0);
            let m = occlusion_mask(&fwd, &FlowField::zeros(30, 8, 1.0), 1.0).unwrap();
            for y in 0..8 {
                for x in 0..20 {
                    assert!((m.get(x, y) - d.min(1.0)).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn flow_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut f = FlowField::zeros(5, 4, 0.25);
        f.u[3] = -1.5;
        f.v[7] = 2.25;
        let path = dir.path().join("flow.pfm");
        write_flow(&path, &f).unwrap();
        assert!(path.with_extension("json").is_file());
        assert_eq!(read_flow(&path).unwrap(), f);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn occlusion_in_unit_range_and_monotone(
            fu in proptest::collection::vec(-3.0f32..3.0, 36),
            bu in proptest::collection::vec(-3.0f32..3.0, 36),
            s1 in 0.0f32..4.0,
            ds in 0.0f32..4.0,
        ) {
            let mk = |u: &Vec<f32>| FlowField { width: 6, height: 6, scale: 1.0, u: u.clone(), v: u.iter().rev().cloned().collect() };
            let (f, b) = (mk(&fu), mk(&bu));
            let m1 = occlusion_mask(&f, &b, s1).unwrap();
            let m2 = occlusion_mask(&f, &b, s1 + ds).unwrap();
            for (a, c) in m1.data.iter().zip(&m2.data) {
                prop_assert!((0.0..=1.0).contains(a));
                prop_assert!(a <= c);
            }
        }

        #[test]
        fn warp_preserves_range(
            vals in proptest::collection::vec(0.0f32..5.0, 3 * 25),
            fu in proptest::collection::vec(-6.0f32..6.0, 25),
        ) {
            let img = LinearImage::from_planes(5, 5, vals.clone()).unwrap();
            let f = FlowField { width: 5, height: 5, scale: 1.0, u: fu.clone(), v: fu.iter().map(|x| 0.5 * x).collect() };
            let out = warp(&img, &f).unwrap();
            let lo = vals.iter().cloned().fold(f32::INFINITY, f32::min);
            let hi = vals.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            prop_assert!(out.data.iter().all(|&v| v >= lo - 1e-5 && v <= hi + 1e-5));
        }
    }
}
