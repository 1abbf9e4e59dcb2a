use crate::error::{Error, Result};
use crate::real::Real;

use super::{LinearImage, MaskImage};

/// Edge-clamped bilinear lookup at continuous pixel coordinates, where
/// integer coordinates are pixel centers.
#[inline]
pub fn sample_bilinear<T: Real>(plane: &[T], w: usize, h: usize, x: T, y: T) -> T {
    let xmax = T::of((w - 1) as f64);
    let ymax = T::of((h - 1) as f64);
    let x = x.max(T::zero()).min(xmax);
    let y = y.max(T::zero()).min(ymax);
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let xi = x0.to_usize().unwrap_or(0);
    let yi = y0.to_usize().unwrap_or(0);
    let x1 = (xi + 1).min(w - 1);
    let y1 = (yi + 1).min(h - 1);
    let a = plane[yi * w + xi];
    let b = plane[yi * w + x1];
    let c = plane[y1 * w + xi];
    let d = plane[y1 * w + x1];
    let top = a + fx * (b - a);
    let bottom = c + fx * (d - c);
    top + fy * (bottom - top)
}

/// Resizes a plane with half-pixel-centered bilinear sampling.
pub fn resample_plane<T: Real>(src: &[T], w: usize, h: usize, new_w: usize, new_h: usize) -> Vec<T> {
    let sx = w as f64 / new_w as f64;
    let sy = h as f64 / new_h as f64;
    let mut out = Vec::with_capacity(new_w * new_h);
    for y in 0..new_h {
        let fy = T::of((y as f64 + 0.5) * sy - 0.5);
        for x in 0..new_w {
            let fx = T::of((x as f64 + 0.5) * sx - 0.5);
            out.push(sample_bilinear(src, w, h, fx, fy));
        }
    }
    out
}

fn check_size(new_w: usize, new_h: usize) -> Result<()> {
    if new_w == 0 || new_h == 0 {
        return Err(Error::invalid(format!("target size {new_w}x{new_h} must be at least 1x1")));
    }
    Ok(())
}

pub fn resample_bilinear(img: &LinearImage, new_w: usize, new_h: usize) -> Result<LinearImage> {
    check_size(new_w, new_h)?;
    let mut data = Vec::with_capacity(3 * new_w * new_h);
    for c in 0..3 {
        data.extend(resample_plane(img.plane(c), img.width, img.height, new_w, new_h));
    }
    LinearImage::from_planes(new_w, new_h, data)
}

pub fn resample_mask(mask: &MaskImage, new_w: usize, new_h: usize) -> Result<MaskImage> {
    check_size(new_w, new_h)?;
    let data = resample_plane(&mask.data, mask.width, mask.height, new_w, new_h)
        .into_iter()
        .map(|v| v.clamp(0.0, 1.0))
        .collect();
    Ok(MaskImage {
        width: new_w,
        height: new_h,
        data,
    })
}

/// 2x2 box average; odd trailing rows/columns are averaged with themselves.
/// Output size is `ceil(w / 2) x ceil(h / 2)`.
pub fn downsample2x(img: &LinearImage) -> LinearImage {
    let (w, h) = img.size();
    let (nw, nh) = (w.div_ceil(2), h.div_ceil(2));
    let mut out = LinearImage::new(nw, nh);
    for c in 0..3 {
        let src = img.plane(c);
        let dst = out.plane_mut(c);
        for y in 0..nh {
            let y0 = 2 * y;
            let y1 = (2 * y + 1).min(h - 1);
            for x in 0..nw {
                let x0 = 2 * x;
                let x1 = (2 * x + 1).min(w - 1);
                dst[y * nw + x] =
                    0.25 * (src[y0 * w + x0] + src[y0 * w + x1] + src[y1 * w + x0] + src[y1 * w + x1]);
            }
        }
    }
    out
}
