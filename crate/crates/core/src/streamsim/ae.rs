use crate::error::{Error, Result};
use crate::imagecore::{Camera, CaptureMetadata};

/// UW/W sensitivity ratio at ISO100 of the reference device.
pub const DEFAULT_MU: f64 = 3.7;

/// Derives UW exposure from W: exposure time locked to `t_W / n`, total
/// exposure `mu * TET_W`, hence gain `n * mu * gain_W`.
pub fn ae_sync(meta_w: &CaptureMetadata, n: u32, mu: f64) -> Result<CaptureMetadata> {
    if n != 2 && n != 4 {
        return Err(Error::invalid(format!("exposure ratio N must be 2 or 4, got {n}")));
    }
    if !(mu > 0.0) || !mu.is_finite() {
        return Err(Error::invalid(format!("sensitivity ratio must be positive, got {mu}")));
    }
    let n = n as f64;
    Ok(CaptureMetadata {
        exposure_time_s: meta_w.exposure_time_s / n,
        sensor_gain: n * mu * meta_w.sensor_gain,
        ccm: meta_w.ccm,
        timestamp_us: meta_w.timestamp_us,
        camera: Camera::UW,
    })
}

/// Total exposure time `gain * t_e`.
pub fn total_exposure(meta: &CaptureMetadata) -> f64 {
    meta.sensor_gain * meta.exposure_time_s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn w(t: f64, gain: f64) -> CaptureMetadata {
        CaptureMetadata {
            exposure_time_s: t,
            sensor_gain: gain,
            ccm: CaptureMetadata::IDENTITY_CCM,
            timestamp_us: 0,
            camera: Camera::W,
        }
    }

    #[test]
    fn quarter_exposure_example() {
        let uw = ae_sync(&w(1.0 / 120.0, 100.0), 4, DEFAULT_MU).unwrap();
        assert!((uw.exposure_time_s - 1.0 / 480.0).abs() < 1e-15);
        assert!((uw.sensor_gain - 1480.0).abs() < 1e-9);
        assert_eq!(uw.camera, Camera::UW);
    }

    #[test]
    fn half_exposure() {
        let uw = ae_sync(&w(0.02, 10.0), 2, DEFAULT_MU).unwrap();
        assert_eq!(uw.exposure_time_s, 0.01);
        assert!((uw.sensor_gain - 74.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_ratio() {
        assert!(ae_sync(&w(0.01, 1.0), 3, DEFAULT_MU).is_err());
        assert!(ae_sync(&w(0.01, 1.0), 2, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn tet_identity(t in 1e-4f64..0.5, gain in 1.0f64..800.0, n in prop_oneof![Just(2u32), Just(4u32)], mu in 0.5f64..8.0) {
            let wm = w(t, gain);
            let uw = ae_sync(&wm, n, mu).unwrap();
            let lhs = total_exposure(&uw);
            let rhs = mu * total_exposure(&wm);
            prop_assert!((lhs - rhs).abs() <= 4.0 * f64::EPSILON * rhs);
        }
    }
}
