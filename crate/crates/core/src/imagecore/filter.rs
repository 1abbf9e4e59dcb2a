use crate::real::Real;

use super::MaskImage;

/// Normalized 1-D Gaussian taps truncated at radius `ceil(3 sigma)`.
/// `sigma == 0` yields the single tap `[1.0]`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let mut taps: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// For each output position along an axis of length `n`, the first source
/// index and the weights of the contiguous source span, with taps that fall
/// outside the axis folded onto the clamped edge sample.
fn folded_taps<T: Real>(taps: &[T], n: usize) -> Vec<(usize, Vec<T>)> {
    let r = taps.len() / 2;
    (0..n)
        .map(|x| {
            let lo = x.saturating_sub(r);
            let hi = (x + r).min(n - 1);
            let mut w = vec![T::zero(); hi - lo + 1];
            for (k, &t) in taps.iter().enumerate() {
                let sx = (x + k).saturating_sub(r).min(n - 1);
                w[sx - lo] += t;
            }
            (lo, w)
        })
        .collect()
}

fn blur_rows<T: Real>(src: &[T], w: usize, h: usize, taps: &[(usize, Vec<T>)], out: &mut [T]) {
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        let dst = &mut out[y * w..(y + 1) * w];
        for (d, (lo, wt)) in dst.iter_mut().zip(taps) {
            let mut acc = T::zero();
            for (&t, &v) in wt.iter().zip(&row[*lo..]) {
                acc += t * v;
            }
            *d = acc;
        }
    }
}

fn blur_cols<T: Real>(src: &[T], w: usize, h: usize, taps: &[(usize, Vec<T>)], out: &mut [T]) {
    out.iter_mut().for_each(|v| *v = T::zero());
    for (y, (lo, wt)) in taps.iter().enumerate().take(h) {
        for (j, &t) in wt.iter().enumerate() {
            let sy = lo + j;
            let srow = &src[sy * w..(sy + 1) * w];
            let drow = &mut out[y * w..(y + 1) * w];
            for (d, &s) in drow.iter_mut().zip(srow) {
                *d += t * s;
            }
        }
    }
}

fn taps_of<T: Real>(sigma: f64) -> Vec<T> {
    gaussian_kernel(sigma).into_iter().map(T::of).collect()
}

/// Separable Gaussian blur of one plane with edge clamping.
pub fn gaussian_blur_plane<T: Real>(src: &[T], w: usize, h: usize, sigma: f64) -> Vec<T> {
    let taps = taps_of::<T>(sigma);
    if taps.len() == 1 || w == 0 || h == 0 {
        return src.to_vec();
    }
    let mut tmp = vec![T::zero(); w * h];
    let mut out = vec![T::zero(); w * h];
    blur_rows(src, w, h, &folded_taps(&taps, w), &mut tmp);
    blur_cols(&tmp, w, h, &folded_taps(&taps, h), &mut out);
    out
}

/// Adjoint of [`gaussian_blur_plane`]: scatters each output gradient back to
/// the clamped source positions it was gathered from.
pub fn gaussian_blur_plane_adjoint<T: Real>(grad: &[T], w: usize, h: usize, sigma: f64) -> Vec<T> {
    let taps = taps_of::<T>(sigma);
    if taps.len() == 1 || w == 0 || h == 0 {
        return grad.to_vec();
    }
    // Columns first (reverse order of the forward pass).
    let mut tmp = vec![T::zero(); w * h];
    for (y, (lo, wt)) in folded_taps(&taps, h).iter().enumerate() {
        let grow = &grad[y * w..(y + 1) * w];
        for (j, &t) in wt.iter().enumerate() {
            let sy = lo + j;
            let trow = &mut tmp[sy * w..(sy + 1) * w];
            for (d, &g) in trow.iter_mut().zip(grow) {
                *d += t * g;
            }
        }
    }
    let xt = folded_taps(&taps, w);
    let mut out = vec![T::zero(); w * h];
    for y in 0..h {
        let orow = &mut out[y * w..(y + 1) * w];
        for (x, (lo, wt)) in xt.iter().enumerate() {
            let g = tmp[y * w + x];
            for (o, &t) in orow[*lo..].iter_mut().zip(wt) {
                *o += t * g;
            }
        }
    }
    out
}

/// Gaussian-smooths a mask (radius `3 sigma`, edge clamped). `sigma == 0`
/// returns the mask unchanged.
pub fn smooth_mask(mask: &MaskImage, sigma_px: f64) -> MaskImage {
    if sigma_px <= 0.0 {
        return mask.clone();
    }
    let data = gaussian_blur_plane(&mask.data, mask.width, mask.height, sigma_px)
        .into_iter()
        .map(|v| v.clamp(0.0, 1.0))
        .collect();
    MaskImage {
        width: mask.width,
        height: mask.height,
        data,
    }
}
