//! Fallback checks that decide whether to ship the fused result.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::MaskImage;
use crate::postproc::Srgb8Image;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GateConfig {
    pub min_motion_px: f64,
    pub max_timestamp_diff_ms: f64,
    pub max_sensor_gain: f64,
    pub min_masked_mse: f64,
    /// Multiplier applied to the `[0, 1]`-scale masked MSE before it is
    /// compared with `min_masked_mse`.
    pub mse_scale: f64,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            min_motion_px: 2.0,
            max_timestamp_diff_ms: 20.0,
            max_sensor_gain: 160.0,
            min_masked_mse: 0.25,
            mse_scale: 255.0,
        }
    }
}

impl GateConfig {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.min_motion_px,
            self.max_timestamp_diff_ms,
            self.max_sensor_gain,
            self.min_masked_mse,
            self.mse_scale,
        ];
        if all.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::invalid("gate thresholds must be positive and finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum GateReason {
    Ok,
    MotionTooSmall,
    TimestampDesync,
    GainTooHigh,
    MseTooSmall,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateDecision {
    pub use_fusion: bool,
    pub reason: GateReason,
}

impl GateDecision {
    fn new(reason: GateReason) -> Self {
        Self {
            use_fusion: reason == GateReason::Ok,
            reason,
        }
    }
}

/// Mean Euclidean displacement between consecutive face centers.
pub fn face_motion(centers: &[(f64, f64)]) -> Result<f64> {
    if centers.len() < 2 {
        return Err(Error::invalid("face motion needs at least two face centers"));
    }
    let total: f64 = centers
        .windows(2)
        .map(|p| (p[1].0 - p[0].0).hypot(p[1].1 - p[0].1))
        .sum();
    Ok(total / (centers.len() - 1) as f64)
}

/// `sum(M (fused - src)^2) / sum(M)` on gamma-encoded images rescaled to
/// `[0, 1]`, with the squared difference averaged over channels.
pub fn masked_mse(fused: &Srgb8Image, src: &Srgb8Image, face: &MaskImage) -> Result<f64> {
    let size = (src.width, src.height);
    for (what, actual) in [("fused image", (fused.width, fused.height)), ("face mask", face.size())] {
        if actual != size {
            return Err(Error::SizeMismatch {
                what,
                expected: size,
                actual,
            });
        }
    }
    let (mut num, mut den) = (0.0f64, 0.0f64);
    for (i, &m) in face.data.iter().enumerate() {
        if m <= 0.0 {
            continue;
        }
        let sq: f64 = (0..3)
            .map(|c| {
                let d = (fused.rgb[3 * i + c] as f64 - src.rgb[3 * i + c] as f64) / 255.0;
                d * d
            })
            .sum::<f64>()
            / 3.0;
        num += m as f64 * sq;
        den += m as f64;
    }
    if den <= 0.0 {
        return Err(Error::invalid("masked MSE needs a non-empty face mask"));
    }
    Ok(num / den)
}

/// Applies the four checks in order; the first failure is reported. Each
/// check is written as "passes only if", so NaN inputs fall back.
pub fn decide(motion_px: f64, ts_diff_ms: f64, gain: f64, mse: f64, cfg: &GateConfig) -> GateDecision {
    let reason = if !(motion_px >= cfg.min_motion_px) {
        GateReason::MotionTooSmall
    } else if !(ts_diff_ms.abs() <= cfg.max_timestamp_diff_ms) {
        GateReason::TimestampDesync
    } else if !(gain <= cfg.max_sensor_gain) {
        GateReason::GainTooHigh
    } else if !(mse * cfg.mse_scale >= cfg.min_masked_mse) {
        GateReason::MseTooSmall
    } else {
        GateReason::Ok
    };
    GateDecision::new(reason)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn motion_examples() {
        assert_eq!(face_motion(&[(1.0, 1.0), (1.0, 1.0), (1.0, 1.0)]).unwrap(), 0.0);
        assert_eq!(face_motion(&[(0.0, 0.0), (3.0, 4.0)]).unwrap(), 5.0);
        assert_eq!(face_motion(&[(0.0, 0.0), (3.0, 4.0), (3.0, 4.0)]).unwrap(), 2.5);
        assert!(face_motion(&[(0.0, 0.0)]).is_err());
    }

    fn img(v: u8) -> Srgb8Image {
        Srgb8Image {
            width: 4,
            height: 2,
            rgb: vec![v; 24],
        }
    }

    #[test]
    fn mse_examples() {
        let ones = MaskImage::filled(4, 2, 1.0);
        assert_eq!(masked_mse(&img(40), &img(40), &ones).unwrap(), 0.0);
        let full_scale = masked_mse(&img(255), &Srgb8Image { rgb: vec![0; 24], ..img(0) }, &ones).unwrap();
        assert_eq!(full_scale, 1.0);
        let mut a = img(0);
        a.rgb[..12].iter_mut().for_each(|v| *v = 200);
        let right_columns = MaskImage::from_fn(4, 2, |x, _| if x < 2 { 0.0 } else { 1.0 });
        let bottom_row = masked_mse(&a, &img(0), &MaskImage::from_fn(4, 2, |_, y| if y == 1 { 1.0 } else { 0.0 }));
        assert_eq!(bottom_row.unwrap(), 0.0);
        assert!(masked_mse(&a, &img(0), &right_columns).unwrap() > 0.0);
        assert!(masked_mse(&a, &img(0), &MaskImage::filled(4, 2, 0.0)).is_err());
    }

    #[test]
    fn decision_examples() {
        let cfg = GateConfig::default();
        assert!(decide(10.0, 5.0, 100.0, 1.0, &cfg).use_fusion);
        assert_eq!(decide(10.0, 25.0, 100.0, 1.0, &cfg).reason, GateReason::TimestampDesync);
        assert_eq!(decide(10.0, 5.0, 200.0, 1.0, &cfg).reason, GateReason::GainTooHigh);
        assert_eq!(decide(0.5, 25.0, 200.0, 0.0, &cfg).reason, GateReason::MotionTooSmall);
        assert_eq!(decide(f64::NAN, 5.0, 100.0, 1.0, &cfg).reason, GateReason::MotionTooSmall);
    }
}
