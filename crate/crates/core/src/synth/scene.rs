//! Procedural portrait scenes and full source/reference/ground-truth triplets.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::{
    decode_pfm, encode_pfm, read_image, read_mask, write_image, write_mask, Camera, CaptureMetadata, FaceBox,
    ImageFormat, LinearImage, MaskImage, ShotManifest,
};

use super::blur::{apply_blur_model, NoiseParams};
use super::highlights::{render_highlights, sample_highlights, Highlight, HighlightParams};
use super::kernel::{sample_trajectory_kernel, BlurKernel, TrajectoryConfig};
use super::reference::simulate_uw_reference;
use super::texture::{sub_seed, ValueNoise};

const STREAM_LAYOUT: u64 = 1;
const STREAM_KERNEL: u64 = 2;
const STREAM_HIGHLIGHTS: u64 = 3;
const STREAM_NOISE: u64 = 4;
const STREAM_REFERENCE: u64 = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    /// Side of the square W frame in pixels.
    pub size: usize,
    /// Face width as a fraction of the frame side.
    pub face_fraction: [f64; 2],
    pub kernel_extent_px: [f64; 2],
    pub nonlinearity: f64,
    pub highlights: bool,
    pub highlight_count: [usize; 2],
    pub source_noise: NoiseParams,
    pub exposure_ratio: u32,
    /// Largest relative per-channel gain error of the reference.
    pub color_drift: f64,
    /// Largest per-channel low-frequency tint ramp across the reference.
    pub shading: f64,
    /// Largest viewpoint offset between the cameras, in W pixels.
    pub parallax_px: f64,
    /// Largest off-identity entry of either camera's color matrix.
    pub ccm_jitter: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            size: 160,
            face_fraction: [0.32, 0.42],
            kernel_extent_px: [5.0, 31.0],
            nonlinearity: 0.5,
            highlights: true,
            highlight_count: [1, 3],
            source_noise: NoiseParams {
                read_sigma: 0.004,
                shot_gain: 0.0004,
            },
            exposure_ratio: 4,
            color_drift: 0.15,
            shading: 0.1,
            parallax_px: 2.0,
            ccm_jitter: 0.04,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size < 64 {
            return Err(Error::invalid("scene size must be at least 64"));
        }
        let ordered = |r: [f64; 2]| r[0] <= r[1];
        if !ordered(self.face_fraction) || self.face_fraction[0] <= 0.0 || self.face_fraction[1] > 0.6 {
            return Err(Error::invalid("face_fraction must be an ordered range within (0, 0.6]"));
        }
        if !ordered(self.kernel_extent_px) || self.kernel_extent_px[0] < 0.0 || self.kernel_extent_px[1] > 150.0 {
            return Err(Error::invalid("kernel_extent_px must be an ordered range within [0, 150]"));
        }
        if self.highlight_count[0] > self.highlight_count[1] {
            return Err(Error::invalid("highlight_count must be ordered"));
        }
        let small = |v: f64| (0.0..0.5).contains(&v);
        if !small(self.color_drift) || !small(self.shading) || !small(self.ccm_jitter) || !(self.parallax_px >= 0.0) {
            return Err(Error::invalid("perturbation magnitudes out of range"));
        }
        self.source_noise.validate()
    }
}

/// Everything needed to regenerate a triplet, stored as `meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletMeta {
    #[serde(flatten)]
    pub manifest: ShotManifest,
    pub seed: u64,
    pub scene: SceneConfig,
    pub highlights: Vec<Highlight>,
    pub parallax_px: [f64; 2],
    pub color_drift: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Triplet {
    /// Sharp target, including any synthetic highlights.
    pub gt: LinearImage,
    pub source: LinearImage,
    pub reference: LinearImage,
    pub face_mask: MaskImage,
    pub kernel: BlurKernel,
    pub meta: TripletMeta,
}

/// Seed-determined layout and palette of one portrait.
#[derive(Debug, Clone)]
struct Portrait {
    face: FaceBox,
    skin: [f64; 3],
    hair: [f64; 3],
    iris: [f64; 3],
    lips: [f64; 3],
    bg: [[f64; 3]; 2],
    stripe: [f64; 3],
    noise: ValueNoise,
    hair_noise: ValueNoise,
    bg_noise: ValueNoise,
}

fn color(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> [f64; 3] {
    [0; 3].map(|_| rng.random_range(lo..hi))
}

impl Portrait {
    fn sample(cfg: &SceneConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, STREAM_LAYOUT));
        let s = cfg.size as f64;
        let fw = s * rng.random_range(cfg.face_fraction[0]..=cfg.face_fraction[1]);
        let fh = fw * rng.random_range(1.15..1.3);
        let margin = 0.1 * s;
        let cx = rng.random_range(margin + fw / 2.0..=s - margin - fw / 2.0);
        let cy = rng.random_range(margin + fh / 2.0..=s - margin - fh / 2.0);
        let tone = rng.random_range(0.25..0.75);
        let skin = [tone, tone * rng.random_range(0.7..0.8), tone * rng.random_range(0.55..0.68)];
        Self {
            face: FaceBox {
                center_x: cx,
                center_y: cy,
                width: fw,
                height: fh,
            },
            skin,
            hair: color(&mut rng, 0.03, 0.35),
            iris: color(&mut rng, 0.05, 0.4),
            lips: [rng.random_range(0.45..0.7), rng.random_range(0.12..0.25), rng.random_range(0.15..0.3)],
            bg: [color(&mut rng, 0.1, 0.8), color(&mut rng, 0.1, 0.8)],
            stripe: color(&mut rng, 0.0, 1.0),
            noise: ValueNoise::new(rng.random()),
            hair_noise: ValueNoise::new(rng.random()),
            bg_noise: ValueNoise::new(rng.random()),
        }
    }

    fn background(&self, x: f64, y: f64) -> [f64; 3] {
        let t = self.bg_noise.fbm(x, y, 1.0 / 28.0, 4);
        let stripes = ((x * 0.21 + y * 0.08 + 6.0 * self.bg_noise.at(x / 40.0, y / 40.0)).sin() > 0.6) as u8 as f64;
        [0, 1, 2].map(|c| {
            let base = self.bg[0][c] + (self.bg[1][c] - self.bg[0][c]) * t;
            base * (1.0 - 0.35 * stripes) + 0.35 * stripes * self.stripe[c]
        })
    }

    fn face(&self, x: f64, y: f64) -> Option<[f64; 3]> {
        let f = &self.face;
        let u = (x - f.center_x) / (f.width / 2.0);
        let v = (y - f.center_y) / (f.height / 2.0);
        if u * u + v * v > 1.0 {
            return None;
        }
        let ellipse = |cu: f64, cv: f64, ru: f64, rv: f64| {
            let (a, b) = ((u - cu) / ru, (v - cv) / rv);
            a * a + b * b <= 1.0
        };
        // Hair cap with strand-like anisotropic texture.
        let hairline = -0.45 + 0.08 * (u * 5.0).sin();
        if v < hairline {
            let strands = self.hair_noise.fbm(x * 0.25, y * 2.0, 0.6, 3);
            return Some(self.hair.map(|h| h * (0.5 + strands)));
        }
        for side in [-1.0, 1.0] {
            let ex = side * 0.38;
            if ellipse(ex, -0.22, 0.22, 0.05) {
                return Some(self.hair.map(|h| h * 0.6));
            }
            if ellipse(ex, -0.08, 0.2, 0.09) {
                let (a, b) = ((u - ex) / 0.2, (v + 0.08) / 0.09 * 0.45);
                let r = (a * a + b * b).sqrt();
                return Some(if r < 0.18 {
                    [0.02; 3]
                } else if r < 0.45 {
                    self.iris
                } else {
                    [0.85, 0.83, 0.8]
                });
            }
        }
        if ellipse(0.0, 0.5, 0.3, 0.08) {
            let crease = (v - 0.5).abs() < 0.012;
            return Some(if crease { self.lips.map(|c| c * 0.4) } else { self.lips });
        }
        let nose = (u.abs() < 0.04 && (0.02..0.3).contains(&v)) || ellipse(0.0, 0.3, 0.14, 0.04);
        let pores = self.noise.fbm(x, y, 0.35, 3);
        let freckles = (self.noise.at(x * 0.5 + 91.0, y * 0.5) > 0.82) as u8 as f64;
        let shade = (0.8 + 0.4 * pores) * (1.0 - 0.3 * freckles) * if nose { 0.8 } else { 1.0 };
        Some(self.skin.map(|c| c * shade))
    }

    fn at(&self, x: f64, y: f64) -> [f64; 3] {
        self.face(x, y).unwrap_or_else(|| self.background(x, y))
    }

    /// Renders with 2x2 supersampling; `offset` shifts the viewpoint.
    fn render(&self, size: usize, offset: [f64; 2]) -> LinearImage {
        LinearImage::from_fn(size, size, |x, y| {
            let mut acc = [0.0f64; 3];
            for sy in 0..2 {
                for sx in 0..2 {
                    let px = x as f64 + 0.25 + 0.5 * sx as f64 + offset[0];
                    let py = y as f64 + 0.25 + 0.5 * sy as f64 + offset[1];
                    let c = self.at(px, py);
                    for k in 0..3 {
                        acc[k] += 0.25 * c[k];
                    }
                }
            }
            acc.map(|v| v as f32)
        })
    }
}

fn jittered_ccm(rng: &mut ChaCha8Rng, jitter: f64) -> [f64; 9] {
    let mut m = CaptureMetadata::IDENTITY_CCM;
    if jitter > 0.0 {
        for v in m.iter_mut() {
            *v += rng.random_range(-jitter..jitter);
        }
    }
    m
}

/// Maps reference-space values so that normalizing with the two CCMs recovers them.
fn apply_matrix(img: &mut LinearImage, m: &Matrix3<f64>) {
    let n = img.pixels();
    for p in 0..n {
        let v = nalgebra::Vector3::new(img.data[p] as f64, img.data[n + p] as f64, img.data[2 * n + p] as f64);
        let r = m * v;
        for c in 0..3 {
            img.data[c * n + p] = r[c].max(0.0) as f32;
        }
    }
}

/// Generates one triplet; every random component draws from its own stream,
/// so toggling highlights leaves the rest of the triplet unchanged.
pub fn generate_triplet(cfg: &SceneConfig, seed: u64) -> Result<Triplet> {
    cfg.validate()?;
    let size = cfg.size;
    let portrait = Portrait::sample(cfg, seed);
    let face_mask = MaskImage::ellipse(size, size, &portrait.face);

    let mut krng = ChaCha8Rng::seed_from_u64(sub_seed(seed, STREAM_KERNEL));
    let extent = if cfg.kernel_extent_px[0] == cfg.kernel_extent_px[1] {
        cfg.kernel_extent_px[0]
    } else {
        krng.random_range(cfg.kernel_extent_px[0]..cfg.kernel_extent_px[1])
    };
    let kernel = sample_trajectory_kernel(&TrajectoryConfig {
        num_samples: 2000,
        nonlinearity: cfg.nonlinearity,
        max_extent_px: extent,
        rng_seed: krng.random(),
        initial_angle: None,
    })?;

    let highlights = if cfg.highlights {
        let hp = HighlightParams {
            count_range: cfg.highlight_count,
            rng_seed: sub_seed(seed, STREAM_HIGHLIGHTS),
            ..HighlightParams::default()
        };
        sample_highlights(&face_mask, &hp)?
    } else {
        Vec::new()
    };
    let gt = render_highlights(&portrait.render(size, [0.0, 0.0]), &highlights);
    let source = apply_blur_model(&gt, &face_mask, &kernel, &cfg.source_noise, sub_seed(seed, STREAM_NOISE))?;

    let mut rrng = ChaCha8Rng::seed_from_u64(sub_seed(seed, STREAM_REFERENCE));
    let p = cfg.parallax_px;
    let parallax = if p > 0.0 {
        [rrng.random_range(-p..=p), rrng.random_range(-p..=p)]
    } else {
        [0.0, 0.0]
    };
    let d = cfg.color_drift;
    let color_drift = [0; 3].map(|_| if d > 0.0 { 1.0 + rrng.random_range(-d..=d) } else { 1.0 });
    let ccm_src = jittered_ccm(&mut rrng, cfg.ccm_jitter);
    let ccm_ref = jittered_ccm(&mut rrng, cfg.ccm_jitter);
    let exposure = rrng.random_range(1.0 / 60.0..1.0 / 15.0);
    let gain = rrng.random_range(10.0..100.0);
    let timestamp_us = rrng.random_range(0..1_000_000_000i64);
    let shading = [0; 3].map(|_| {
        if cfg.shading > 0.0 {
            [rrng.random_range(-cfg.shading..=cfg.shading), rrng.random_range(-cfg.shading..=cfg.shading)]
        } else {
            [0.0, 0.0]
        }
    });
    let ref_seed: u64 = rrng.random();

    let shifted: Vec<Highlight> = highlights
        .iter()
        .map(|h| Highlight {
            x: h.x - parallax[0],
            y: h.y - parallax[1],
            ..*h
        })
        .collect();
    let mut scene_ref = render_highlights(&portrait.render(size, parallax), &shifted);
    let to_ref = Matrix3::from_row_slice(&ccm_ref)
        .try_inverse()
        .ok_or(Error::SingularMatrix(0.0))?
        * Matrix3::from_row_slice(&ccm_src);
    apply_matrix(&mut scene_ref, &to_ref);

    let meta_source = CaptureMetadata {
        exposure_time_s: exposure,
        sensor_gain: gain,
        ccm: ccm_src,
        timestamp_us,
        camera: Camera::W,
    };
    let (mut reference, mut meta_reference) = simulate_uw_reference(
        &scene_ref,
        &meta_source,
        cfg.exposure_ratio,
        &cfg.source_noise,
        color_drift,
        ref_seed,
    )?;
    meta_reference.ccm = ccm_ref;
    let (rw, rh) = reference.size();
    for (c, ramp) in shading.iter().enumerate() {
        for y in 0..rh {
            let ty = (y as f64 + 0.5) / rh as f64 - 0.5;
            for x in 0..rw {
                let tx = (x as f64 + 0.5) / rw as f64 - 0.5;
                let g = 1.0 + 2.0 * (ramp[0] * tx + ramp[1] * ty);
                let v = reference.get(c, x, y);
                reference.set(c, x, y, (v as f64 * g) as f32);
            }
        }
    }

    let (sw, sh) = kernel.support();
    let f = portrait.face;
    let motion = [(sw.max(1) - 1) as f64, (sh.max(1) - 1) as f64];
    let meta = TripletMeta {
        manifest: ShotManifest {
            face_box: f,
            meta_source,
            meta_reference,
            face_centers: vec![[f.center_x, f.center_y], [f.center_x + motion[0], f.center_y + motion[1]]],
        },
        seed,
        scene: cfg.clone(),
        highlights,
        parallax_px: parallax,
        color_drift,
    };
    Ok(Triplet {
        gt,
        source,
        reference,
        face_mask,
        kernel,
        meta,
    })
}

pub const TRIPLET_FILES: [&str; 6] = [
    "gt.pfm",
    "source.pfm",
    "reference.pfm",
    "face_mask.pfm",
    "kernel.pfm",
    "meta.json",
];

pub fn write_triplet(dir: &Path, t: &Triplet) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_image(&dir.join("gt.pfm"), &t.gt, ImageFormat::Pfm)?;
    write_image(&dir.join("source.pfm"), &t.source, ImageFormat::Pfm)?;
    write_image(&dir.join("reference.pfm"), &t.reference, ImageFormat::Pfm)?;
    write_mask(&dir.join("face_mask.pfm"), &t.face_mask)?;
    let kpath = dir.join("kernel.pfm");
    fs::write(&kpath, encode_pfm(t.kernel.size, t.kernel.size, 1, &t.kernel.weights)).map_err(|e| Error::io(&kpath, e))?;
    let mpath = dir.join("meta.json");
    let mut json = serde_json::to_string_pretty(&t.meta)?;
    json.push('\n');
    fs::write(&mpath, json).map_err(|e| Error::io(&mpath, e))
}

pub fn read_triplet_meta(dir: &Path) -> Result<TripletMeta> {
    let path = dir.join("meta.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn read_triplet(dir: &Path) -> Result<Triplet> {
    let kpath = dir.join("kernel.pfm");
    let k = decode_pfm(&fs::read(&kpath).map_err(|e| Error::io(&kpath, e))?)?;
    if k.channels != 1 || k.width != k.height {
        return Err(Error::format("PFM", "kernel must be a square single-channel image"));
    }
    Ok(Triplet {
        gt: read_image(&dir.join("gt.pfm"), ImageFormat::Pfm)?,
        source: read_image(&dir.join("source.pfm"), ImageFormat::Pfm)?,
        reference: read_image(&dir.join("reference.pfm"), ImageFormat::Pfm)?,
        face_mask: read_mask(&dir.join("face_mask.pfm"))?,
        kernel: BlurKernel::from_weights(k.width, k.data)?,
        meta: read_triplet_meta(dir)?,
    })
}

pub fn triplet_dir_name(index: usize) -> String {
    format!("triplet_{index:04}")
}

/// Seed of the `index`-th triplet of a dataset generated with `seed`.
pub fn triplet_seed(seed: u64, index: usize) -> u64 {
    sub_seed(seed, 1000 + index as u64)
}

/// Writes `count` triplets into numbered subdirectories of `out`.
pub fn generate_dataset(out: &Path, count: usize, cfg: &SceneConfig, seed: u64) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    (0..count)
        .into_par_iter()
        .map(|i| {
            let dir = out.join(triplet_dir_name(i));
            write_triplet(&dir, &generate_triplet(cfg, triplet_seed(seed, i))?)?;
            Ok(dir)
        })
        .collect()
}

/// Sorted triplet directories (those containing `meta.json`) under `root`.
pub fn list_triplets(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for entry in fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let path = entry.map_err(|e| Error::io(root, e))?.path();
        if path.is_dir() && path.join("meta.json").is_file() {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SceneConfig {
        SceneConfig {
            size: 96,
            ..SceneConfig::default()
        }
    }

    #[test]
    fn deterministic() {
        let a = generate_triplet(&small(), 5).unwrap();
        let b = generate_triplet(&small(), 5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.gt, generate_triplet(&small(), 6).unwrap().gt);
    }

    #[test]
    fn shapes_and_ranges() {
        let t = generate_triplet(&small(), 1).unwrap();
        assert_eq!(t.gt.size(), (96, 96));
        assert_eq!(t.source.size(), (96, 96));
        assert_eq!(t.reference.size(), (48, 48));
        t.source.validate().unwrap();
        t.reference.validate().unwrap();
        assert!((t.kernel.sum() - 1.0).abs() < 1e-6);
        let f = t.meta.manifest.face_box;
        assert!(f.left() >= 0.0 && f.right() <= 96.0 && f.top() >= 0.0 && f.bottom() <= 96.0);
    }

    #[test]
    fn highlights_toggle_only_dots() {
        let on = generate_triplet(&small(), 9).unwrap();
        let off = generate_triplet(
            &SceneConfig {
                highlights: false,
                ..small()
            },
            9,
        )
        .unwrap();
        assert!(!on.meta.highlights.is_empty());
        assert!(off.meta.highlights.is_empty());
        assert_eq!(on.kernel, off.kernel);
        assert_eq!(on.face_mask, off.face_mask);
        assert!(on.gt.data.iter().zip(&off.gt.data).all(|(a, b)| a >= b));
    }

    #[test]
    fn background_stays_sharp() {
        let cfg = SceneConfig {
            source_noise: NoiseParams::ZERO,
            ..small()
        };
        let t = generate_triplet(&cfg, 2).unwrap();
        let r = t.kernel.radius() + 1;
        let n = t.gt.pixels();
        let (w, _) = t.gt.size();
        let mut outside = 0;
        for p in 0..n {
            let (x, y) = (p % w, p / w);
            let far = (0..t.face_mask.height)
                .filter(|&yy| yy + r >= y && yy <= y + r)
                .all(|yy| (0..w).filter(|&xx| xx + r >= x && xx <= x + r).all(|xx| t.face_mask.get(xx, yy) == 0.0));
            if far {
                outside += 1;
                for c in 0..3 {
                    assert_eq!(t.source.data[c * n + p], t.gt.data[c * n + p]);
                }
            }
        }
        assert!(outside > 0);
    }

    #[test]
    fn round_trip_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let t = generate_triplet(&small(), 4).unwrap();
        write_triplet(dir.path(), &t).unwrap();
        for f in TRIPLET_FILES {
            assert!(dir.path().join(f).is_file());
        }
        let back = read_triplet(dir.path()).unwrap();
        assert_eq!(back, t);
        let manifest = crate::imagecore::read_manifest(&dir.path().join("meta.json")).unwrap();
        assert_eq!(manifest, t.meta.manifest);
    }
}
