use crate::error::{Error, Result};
use crate::imagecore::{gaussian_blur_plane, LinearImage, MaskImage};

/// PSNR reported for identical images.
const MAX_PSNR: f64 = 100.0;

fn check(a: &LinearImage, b: &LinearImage, mask: &MaskImage) -> Result<()> {
    for (what, actual) in [("compared image", b.size()), ("metric mask", mask.size())] {
        if actual != a.size() {
            return Err(Error::SizeMismatch {
                what,
                expected: a.size(),
                actual,
            });
        }
    }
    Ok(())
}

fn weighted_mean(per_pixel: impl Iterator<Item = f64>, mask: &MaskImage) -> Result<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for (v, &m) in per_pixel.zip(&mask.data) {
        if m > 0.0 {
            num += m as f64 * v;
            den += m as f64;
        }
    }
    if den <= 0.0 {
        return Err(Error::invalid("metric mask is empty"));
    }
    Ok(num / den)
}

/// Mask-weighted mean over pixels of the channel-averaged squared error.
pub fn masked_mse(a: &LinearImage, b: &LinearImage, mask: &MaskImage) -> Result<f64> {
    check(a, b, mask)?;
    let n = a.pixels();
    let sq = (0..n).map(|i| {
        (0..3)
            .map(|c| (a.data[c * n + i] as f64 - b.data[c * n + i] as f64).powi(2))
            .sum::<f64>()
            / 3.0
    });
    weighted_mean(sq, mask)
}

/// `10 log10(1 / mse)` for unit peak, capped for identical inputs.
pub fn masked_psnr(a: &LinearImage, b: &LinearImage, mask: &MaskImage) -> Result<f64> {
    let mse = masked_mse(a, b, mask)?;
    Ok(if mse > 0.0 { (10.0 * (1.0 / mse).log10()).min(MAX_PSNR) } else { MAX_PSNR })
}

/// Mask-weighted mean of `|G_sigma(a) - G_sigma(b)|`, averaged over channels:
/// how far the local color means of `a` drift from those of `b`.
pub fn smoothed_mean_deviation(a: &LinearImage, b: &LinearImage, mask: &MaskImage, sigma: f64) -> Result<f64> {
    check(a, b, mask)?;
    let (w, h) = a.size();
    let mut dev = vec![0.0f64; w * h];
    for c in 0..3 {
        let ga = gaussian_blur_plane(a.plane(c), w, h, sigma);
        let gb = gaussian_blur_plane(b.plane(c), w, h, sigma);
        for (d, (x, y)) in dev.iter_mut().zip(ga.iter().zip(&gb)) {
            *d += (*x as f64 - *y as f64).abs() / 3.0;
        }
    }
    weighted_mean(dev.into_iter(), mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_offsets() {
        let a = LinearImage::filled(8, 8, 0.5);
        let b = LinearImage::filled(8, 8, 0.625);
        let m = MaskImage::filled(8, 8, 1.0);
        assert_eq!(masked_mse(&a, &b, &m).unwrap(), 1.0 / 64.0);
        assert!((masked_psnr(&a, &b, &m).unwrap() - 18.061799739838872).abs() < 1e-9);
        assert!((smoothed_mean_deviation(&a, &b, &m, 3.0).unwrap() - 0.125).abs() < 1e-6);
        assert_eq!(masked_psnr(&a, &a, &m).unwrap(), MAX_PSNR);
    }

    #[test]
    fn mask_weights_pixels() {
        let a = LinearImage::from_fn(4, 1, |x, _| if x < 2 { [0.0; 3] } else { [1.0; 3] });
        let b = LinearImage::new(4, 1);
        let left = MaskImage::from_fn(4, 1, |x, _| if x < 2 { 1.0 } else { 0.0 });
        assert_eq!(masked_mse(&a, &b, &left).unwrap(), 0.0);
        let half = MaskImage::filled(4, 1, 0.5);
        assert_eq!(masked_mse(&a, &b, &half).unwrap(), 0.5);
        assert!(masked_mse(&a, &b, &MaskImage::filled(4, 1, 0.0)).is_err());
    }
}
