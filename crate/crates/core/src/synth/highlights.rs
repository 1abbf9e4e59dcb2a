use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::{LinearImage, MaskImage};

const SUPERSAMPLE: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HighlightParams {
    pub count_range: [usize; 2],
    pub radius_range_px: [f64; 2],
    pub intensity_range: [f64; 2],
    pub rng_seed: u64,
}

impl Default for HighlightParams {
    fn default() -> Self {
        Self {
            count_range: [1, 3],
            radius_range_px: [1.0, 3.0],
            intensity_range: [2.0, 5.0],
            rng_seed: 0,
        }
    }
}

impl HighlightParams {
    pub fn validate(&self) -> Result<()> {
        let ordered = self.count_range[0] <= self.count_range[1]
            && self.radius_range_px[0] <= self.radius_range_px[1]
            && self.intensity_range[0] <= self.intensity_range[1];
        if !ordered {
            return Err(Error::invalid("highlight ranges must be ordered"));
        }
        if !(self.radius_range_px[0] > 0.0 && self.intensity_range[0] >= 0.0) {
            return Err(Error::invalid("highlight radius must be positive and intensity non-negative"));
        }
        Ok(())
    }
}

/// One light dot, in pixel-center coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Highlight {
    pub x: f64,
    pub y: f64,
    pub radius: f64,
    pub intensity: f64,
}

/// Draws dot positions uniformly over pixels where the mask exceeds 0.5.
pub fn sample_highlights(face_mask: &MaskImage, hp: &HighlightParams) -> Result<Vec<Highlight>> {
    hp.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(hp.rng_seed);
    let count = rng.random_range(hp.count_range[0]..=hp.count_range[1]);
    let inside: Vec<usize> = (0..face_mask.data.len())
        .filter(|&p| face_mask.data[p] > 0.5)
        .collect();
    if inside.is_empty() || count == 0 {
        return Ok(Vec::new());
    }
    let w = face_mask.width;
    let uniform = |rng: &mut ChaCha8Rng, r: [f64; 2]| {
        if r[0] == r[1] {
            r[0]
        } else {
            rng.random_range(r[0]..r[1])
        }
    };
    let mut dots = Vec::with_capacity(count);
    for _ in 0..count {
        let p = inside[rng.random_range(0..inside.len())];
        let jx: f64 = rng.random::<f64>() - 0.5;
        let jy: f64 = rng.random::<f64>() - 0.5;
        dots.push(Highlight {
            x: (p % w) as f64 + jx,
            y: (p / w) as f64 + jy,
            radius: uniform(&mut rng, hp.radius_range_px),
            intensity: uniform(&mut rng, hp.intensity_range),
        });
    }
    Ok(dots)
}

/// Adds anti-aliased white discs; coverage is estimated by supersampling.
pub fn render_highlights(img: &LinearImage, dots: &[Highlight]) -> LinearImage {
    let mut out = img.clone();
    let (w, h) = img.size();
    let n = out.pixels();
    let step = 1.0 / SUPERSAMPLE as f64;
    for d in dots {
        let x0 = (d.x - d.radius - 1.0).floor().max(0.0) as usize;
        let y0 = (d.y - d.radius - 1.0).floor().max(0.0) as usize;
        let x1 = ((d.x + d.radius + 1.0).ceil().max(0.0) as usize).min(w.saturating_sub(1));
        let y1 = ((d.y + d.radius + 1.0).ceil().max(0.0) as usize).min(h.saturating_sub(1));
        let r2 = d.radius * d.radius;
        for py in y0..=y1 {
            for px in x0..=x1 {
                let mut hits = 0;
                for sy in 0..SUPERSAMPLE {
                    let dy = py as f64 - 0.5 + (sy as f64 + 0.5) * step - d.y;
                    for sx in 0..SUPERSAMPLE {
                        let dx = px as f64 - 0.5 + (sx as f64 + 0.5) * step - d.x;
                        if dx * dx + dy * dy <= r2 {
                            hits += 1;
                        }
                    }
                }
                if hits > 0 {
                    let add = (d.intensity * hits as f64 / (SUPERSAMPLE * SUPERSAMPLE) as f64) as f32;
                    for c in 0..3 {
                        out.data[c * n + py * w + px] += add;
                    }
                }
            }
        }
    }
    out
}

/// Random light dots inside the face region, e.g. eye or eyewear reflections.
/// Values may exceed 1.
pub fn add_synthetic_highlights(gt: &LinearImage, face_mask: &MaskImage, hp: &HighlightParams) -> Result<LinearImage> {
    if face_mask.size() != gt.size() {
        return Err(Error::SizeMismatch {
            what: "face mask",
            expected: gt.size(),
            actual: face_mask.size(),
        });
    }
    let dots = sample_highlights(face_mask, hp)?;
    Ok(render_highlights(gt, &dots))
}
