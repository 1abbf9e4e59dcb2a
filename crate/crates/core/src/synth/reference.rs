use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imagecore::{downsample2x, CaptureMetadata, LinearImage};
use crate::streamsim::ae::{ae_sync, DEFAULT_MU};

use super::blur::{add_noise, NoiseParams};

/// Largest capture-time offset between the two cameras, in microseconds.
pub const MAX_TIMESTAMP_OFFSET_US: i64 = 20_000;

/// Emulates the short-exposure ultrawide frame of the same scene: half the
/// resolution, a per-channel color drift, and noise amplified by the extra
/// sensor gain.
pub fn simulate_uw_reference(
    gt: &LinearImage,
    meta_w: &CaptureMetadata,
    n_ratio: u32,
    noise: &NoiseParams,
    color_drift: [f64; 3],
    rng_seed: u64,
) -> Result<(LinearImage, CaptureMetadata)> {
    if n_ratio != 2 && n_ratio != 4 {
        return Err(Error::invalid(format!("exposure ratio must be 2 or 4, got {n_ratio}")));
    }
    if color_drift.iter().any(|&d| !(d > 0.0) || !d.is_finite()) {
        return Err(Error::invalid("color drift factors must be positive"));
    }
    let mut meta = ae_sync(meta_w, n_ratio, DEFAULT_MU)?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    meta.timestamp_us += rng.random_range(0..=MAX_TIMESTAMP_OFFSET_US);
    let noise_seed: u64 = rng.random();

    let mut img = downsample2x(gt);
    for (c, &d) in color_drift.iter().enumerate() {
        if d != 1.0 {
            for v in img.plane_mut(c) {
                *v = (*v as f64 * d) as f32;
            }
        }
    }
    let factor = (n_ratio as f64 * DEFAULT_MU).sqrt();
    add_noise(&mut img, &noise.scaled(factor), noise_seed)?;
    Ok((img, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagecore::Camera;

    fn meta() -> CaptureMetadata {
        CaptureMetadata {
            exposure_time_s: 1.0 / 30.0,
            sensor_gain: 100.0,
            ccm: CaptureMetadata::IDENTITY_CCM,
            timestamp_us: 1_000_000,
            camera: Camera::W,
        }
    }

    fn gt() -> LinearImage {
        LinearImage::from_fn(9, 6, |x, y| [x as f32 * 0.1, y as f32 * 0.1, 0.5])
    }

    #[test]
    fn gain_follows_ratio() {
        let (_, m) = simulate_uw_reference(&gt(), &meta(), 4, &NoiseParams::ZERO, [1.0; 3], 0).unwrap();
        assert!((m.sensor_gain - 1480.0).abs() < 1e-9);
        assert_eq!(m.exposure_time_s, 1.0 / 120.0);
        assert_eq!(m.camera, Camera::UW);
        assert!((0..=20_000).contains(&(m.timestamp_us - 1_000_000)));
    }

    #[test]
    fn clean_reference_is_downsampled_gt() {
        let (img, _) = simulate_uw_reference(&gt(), &meta(), 2, &NoiseParams::ZERO, [1.0; 3], 5).unwrap();
        assert_eq!(img, downsample2x(&gt()));
        assert_eq!(img.width, 5);
    }

    #[test]
    fn drift_scales_channels() {
        let (img, _) = simulate_uw_reference(&gt(), &meta(), 2, &NoiseParams::ZERO, [2.0, 1.0, 0.5], 5).unwrap();
        let base = downsample2x(&gt());
        assert_eq!(img.get(0, 3, 1), base.get(0, 3, 1) * 2.0);
        assert_eq!(img.get(2, 3, 1), base.get(2, 3, 1) * 0.5);
    }

    #[test]
    fn bad_ratio_rejected() {
        assert!(simulate_uw_reference(&gt(), &meta(), 3, &NoiseParams::ZERO, [1.0; 3], 0).is_err());
    }

    #[test]
    fn noise_is_amplified() {
        let flat = LinearImage::filled(400, 400, 0.5);
        let noise = NoiseParams {
            read_sigma: 0.01,
            shot_gain: 0.0,
        };
        let (img, _) = simulate_uw_reference(&flat, &meta(), 4, &noise, [1.0; 3], 3).unwrap();
        let n = img.data.len() as f64;
        let var = img.data.iter().map(|&v| (v as f64 - 0.5).powi(2)).sum::<f64>() / n;
        let expect = 0.01f64.powi(2) * 4.0 * 3.7;
        assert!((var / expect - 1.0).abs() < 0.05);
    }
}
