//! Brings the reference into the source camera's color space and matches the
//! per-channel global mean.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::imagecore::LinearImage;

/// Output of [`ccm_normalize`] with the number of samples clamped to zero.
#[derive(Debug, Clone)]
pub struct Normalized {
    pub image: LinearImage,
    pub clamped: usize,
}

/// Smallest reference channel mean that can still be matched.
pub const MIN_CHANNEL_MEAN: f64 = 1e-9;

/// `CCM_src^-1 * CCM_ref` as a single matrix.
pub fn ccm_transfer(ccm_src: &[f64; 9], ccm_ref: &[f64; 9]) -> Result<Matrix3<f64>> {
    let src = Matrix3::from_row_slice(ccm_src);
    let det = src.determinant();
    if det.abs() <= 1e-9 {
        return Err(Error::SingularMatrix(det.abs()));
    }
    let inv = src.try_inverse().ok_or(Error::SingularMatrix(det.abs()))?;
    Ok(inv * Matrix3::from_row_slice(ccm_ref))
}

/// Applies `CCM_src^-1 * CCM_ref` to every pixel; negatives are clamped.
pub fn ccm_normalize(reference: &LinearImage, ccm_src: &[f64; 9], ccm_ref: &[f64; 9]) -> Result<Normalized> {
    let m = ccm_transfer(ccm_src, ccm_ref)?;
    let n = reference.pixels();
    let mut out = LinearImage::new(reference.width, reference.height);
    let mut clamped = 0;
    for p in 0..n {
        let v = Vector3::new(
            reference.data[p] as f64,
            reference.data[n + p] as f64,
            reference.data[2 * n + p] as f64,
        );
        let r = m * v;
        for c in 0..3 {
            let mut x = r[c] as f32;
            if x < 0.0 {
                x = 0.0;
                clamped += 1;
            }
            out.data[c * n + p] = x;
        }
    }
    if clamped > 0 {
        log::debug!("ccm_normalize clamped {clamped} negative samples");
    }
    Ok(Normalized { image: out, clamped })
}

/// Per-channel gains `mean_src / mean_ref`.
pub fn channel_gains(ref_n: &LinearImage, src: &LinearImage) -> Result<[f64; 3]> {
    if ref_n.pixels() == 0 || src.pixels() == 0 {
        return Err(Error::invalid("color matching needs non-empty images"));
    }
    let mr = ref_n.channel_means();
    let ms = src.channel_means();
    let mut gains = [0.0; 3];
    for c in 0..3 {
        if !(mr[c] > MIN_CHANNEL_MEAN) {
            return Err(Error::DegenerateReference {
                channel: c,
                mean: mr[c],
            });
        }
        gains[c] = ms[c] / mr[c];
    }
    Ok(gains)
}

/// Scales each reference channel so its global mean equals the source's.
pub fn match_global_mean(ref_n: &LinearImage, src: &LinearImage) -> Result<LinearImage> {
    let gains = channel_gains(ref_n, src)?;
    let mut out = ref_n.clone();
    for (c, &g) in gains.iter().enumerate() {
        for v in out.plane_mut(c) {
            *v = (*v as f64 * g) as f32;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const I3: [f64; 9] = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];

    fn textured(w: usize, h: usize, k: f32) -> LinearImage {
        LinearImage::from_fn(w, h, |x, y| {
            let t = ((x * 7 + y * 13) % 17) as f32 / 17.0;
            [k * (0.1 + t), k * (0.2 + 0.5 * t), k * (0.3 + 0.2 * t)]
        })
    }

    #[test]
    fn identity_ccms() {
        let img = textured(5, 4, 1.0);
        let out = ccm_normalize(&img, &I3, &I3).unwrap();
        assert_eq!(out.image, img);
        assert_eq!(out.clamped, 0);
    }

    #[test]
    fn scalar_source_ccm_halves() {
        let img = textured(5, 4, 1.0);
        let two = [2.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 2.0];
        let out = ccm_normalize(&img, &two, &I3).unwrap();
        for (a, b) in out.image.data.iter().zip(&img.data) {
            assert_eq!(*a, *b * 0.5);
        }
    }

    #[test]
    fn matches_direct_multiply() {
        let src = [1.2, 0.1, -0.05, 0.05, 0.9, 0.1, 0.02, -0.1, 1.1];
        let refm = [0.95, 0.05, 0.0, -0.02, 1.1, 0.03, 0.01, 0.02, 0.9];
        let img = textured(4, 4, 1.0);
        let out = ccm_normalize(&img, &src, &refm).unwrap();
        // Oracle: explicit adjugate inverse and hand-rolled 3-vector products.
        let a = src;
        let det = a[0] * (a[4] * a[8] - a[5] * a[7]) - a[1] * (a[3] * a[8] - a[5] * a[6])
            + a[2] * (a[3] * a[7] - a[4] * a[6]);
        let inv = [
            (a[4] * a[8] - a[5] * a[7]) / det,
            (a[2] * a[7] - a[1] * a[8]) / det,
            (a[1] * a[5] - a[2] * a[4]) / det,
            (a[5] * a[6] - a[3] * a[8]) / det,
            (a[0] * a[8] - a[2] * a[6]) / det,
            (a[2] * a[3] - a[0] * a[5]) / det,
            (a[3] * a[7] - a[4] * a[6]) / det,
            (a[1] * a[6] - a[0] * a[7]) / det,
            (a[0] * a[4] - a[1] * a[3]) / det,
        ];
        let mv = |m: &[f64; 9], v: [f64; 3]| {
            [
                m[0] * v[0] + m[1] * v[1] + m[2] * v[2],
                m[3] * v[0] + m[4] * v[1] + m[5] * v[2],
                m[6] * v[0] + m[7] * v[1] + m[8] * v[2],
            ]
        };
        for y in 0..4 {
            for x in 0..4 {
                let v = [0, 1, 2].map(|c| img.get(c, x, y) as f64);
                let expect = mv(&inv, mv(&refm, v));
                for c in 0..3 {
                    let e = expect[c].max(0.0);
                    assert!((out.image.get(c, x, y) as f64 - e).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn singular_source_rejected() {
        let img = textured(2, 2, 1.0);
        let sing = [1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        assert!(matches!(ccm_normalize(&img, &sing, &I3), Err(Error::SingularMatrix(_))));
    }

    #[test]
    fn swapped_matrices_invert() {
        let a = [1.1, 0.05, 0.0, 0.0, 0.95, 0.05, 0.02, 0.0, 1.05];
        let b = [0.9, 0.0, 0.02, 0.03, 1.0, 0.0, 0.0, 0.04, 1.1];
        let img = textured(6, 6, 1.0);
        let fwd = ccm_normalize(&img, &a, &b).unwrap();
        assert_eq!(fwd.clamped, 0);
        let back = ccm_normalize(&fwd.image, &b, &a).unwrap();
        for (x, y) in back.image.data.iter().zip(&img.data) {
            assert!((x - y).abs() < 1e-5);
        }
    }

    #[test]
    fn equal_images_unchanged() {
        let img = textured(5, 5, 1.0);
        let out = match_global_mean(&img, &img).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn half_scaled_reference_restored() {
        let src = textured(8, 8, 1.0);
        let half = textured(8, 8, 0.5);
        let out = match_global_mean(&half, &src).unwrap();
        for (a, b) in out.data.iter().zip(&src.data) {
            assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0));
        }
    }

    #[test]
    fn gains_follow_mean_ratios() {
        let src = LinearImage::from_fn(2, 2, |_, _| [0.2, 0.3, 0.4]);
        let r = LinearImage::from_fn(2, 2, |_, _| [0.4, 0.3, 0.2]);
        let g = channel_gains(&r, &src).unwrap();
        for (a, b) in g.iter().zip([0.5, 1.0, 2.0]) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn dark_reference_channel_is_degenerate() {
        let src = textured(3, 3, 1.0);
        let mut r = textured(3, 3, 1.0);
        r.plane_mut(2).iter_mut().for_each(|v| *v = 0.0);
        assert!(matches!(
            match_global_mean(&r, &src),
            Err(Error::DegenerateReference { channel: 2, .. })
        ));
    }

    proptest! {
        #[test]
        fn means_match_after_gain(
            vals in proptest::collection::vec(0.0f32..3.0, 3 * 36),
            gains in proptest::array::uniform3(0.05f32..5.0),
        ) {
            let src = LinearImage::from_planes(6, 6, vals.clone()).unwrap();
            let mut r = src.clone();
            for c in 0..3 {
                r.plane_mut(c).iter_mut().for_each(|v| *v = *v * gains[c] + 0.01);
            }
            prop_assume!(src.channel_means().iter().all(|&m| m > 1e-3));
            let out = match_global_mean(&r, &src).unwrap();
            let (mo, ms) = (out.channel_means(), src.channel_means());
            for c in 0..3 {
                prop_assert!(((mo[c] - ms[c]) / ms[c]).abs() <= 1e-6);
            }
            prop_assert!(out.data.iter().all(|&v| v >= 0.0));
        }
    }
}
