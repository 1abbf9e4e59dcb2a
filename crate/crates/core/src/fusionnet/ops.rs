//! Forward and adjoint kernels for the layer types used by the network.
//! Tensors are channel-major `c x h x w` buffers.

use crate::real::{Real, Strided, StridedMut};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![T::zero(); c * h * w],
        }
    }

    pub fn plane(&self, c: usize) -> &[T] {
        let n = self.h * self.w;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [T] {
        let n = self.h * self.w;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        (self.c, self.h, self.w) == (other.c, other.h, other.w)
    }

    /// Stacks tensors of equal spatial size along the channel axis.
    pub fn concat(parts: &[&Tensor<T>]) -> Self {
        let (h, w) = (parts[0].h, parts[0].w);
        let mut data = Vec::new();
        let mut c = 0;
        for p in parts {
            assert_eq!((p.h, p.w), (h, w));
            data.extend_from_slice(&p.data);
            c += p.c;
        }
        Self { c, h, w, data }
    }
}

/// Output side of a 3x3 (padding 1) or 1x1 (padding 0) convolution.
pub fn conv_out_len(len: usize, stride: usize) -> usize {
    len.div_ceil(stride)
}

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let chunks = a.len() / 8;
    for i in 0..chunks {
        let (ca, cb) = (&a[i * 8..i * 8 + 8], &b[i * 8..i * 8 + 8]);
        for l in 0..8 {
            acc[l] += ca[l] * cb[l];
        }
    }
    let mut s = T::zero();
    for i in chunks * 8..a.len() {
        s += a[i] * b[i];
    }
    for v in acc {
        s += v;
    }
    s
}

#[inline]
fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// For output index `o` along one axis and kernel tap `k`, the input index,
/// or `None` when it falls into the zero padding.
#[inline]
fn src_index(o: usize, k: usize, stride: usize, pad: usize, len: usize) -> Option<usize> {
    let i = (o * stride + k) as isize - pad as isize;
    (i >= 0 && (i as usize) < len).then_some(i as usize)
}

/// Range of output columns whose stride-1 source column `ox + kx - pad` is in bounds.
#[inline]
fn valid_cols(kx: usize, pad: usize, w_in: usize, w_out: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(kx);
    let hi = (w_in + pad).saturating_sub(kx).min(w_out);
    (lo, hi.max(lo))
}

/// Accumulates `w * in_plane` (one kernel tap) into `out_plane`.
fn tap_forward<T: Real>(
    wt: T,
    inp: &[T],
    out: &mut [T],
    (h_in, w_in): (usize, usize),
    (h_out, w_out): (usize, usize),
    (ky, kx): (usize, usize),
    stride: usize,
    pad: usize,
) {
    for oy in 0..h_out {
        let Some(iy) = src_index(oy, ky, stride, pad, h_in) else {
            continue;
        };
        let irow = &inp[iy * w_in..(iy + 1) * w_in];
        let orow = &mut out[oy * w_out..(oy + 1) * w_out];
        if stride == 1 {
            let (lo, hi) = valid_cols(kx, pad, w_in, w_out);
            if hi > lo {
                axpy(wt, &irow[lo + kx - pad..hi + kx - pad], &mut orow[lo..hi]);
            }
        } else {
            for (ox, o) in orow.iter_mut().enumerate() {
                if let Some(ix) = src_index(ox, kx, stride, pad, w_in) {
                    *o += wt * irow[ix];
                }
            }
        }
    }
}

/// Adjoint of [`tap_forward`] with respect to the input, plus the tap's
/// weight gradient.
#[allow(clippy::too_many_arguments)]
fn tap_backward<T: Real>(
    wt: T,
    inp: &[T],
    gout: &[T],
    gin: Option<&mut [T]>,
    (h_in, w_in): (usize, usize),
    (h_out, w_out): (usize, usize),
    (ky, kx): (usize, usize),
    stride: usize,
    pad: usize,
) -> T {
    let mut gw = T::zero();
    let mut gin = gin;
    for oy in 0..h_out {
        let Some(iy) = src_index(oy, ky, stride, pad, h_in) else {
            continue;
        };
        let irow = &inp[iy * w_in..(iy + 1) * w_in];
        let grow = &gout[oy * w_out..(oy + 1) * w_out];
        if stride == 1 {
            let (lo, hi) = valid_cols(kx, pad, w_in, w_out);
            if hi > lo {
                let (a, b) = (lo + kx - pad, hi + kx - pad);
                gw += dot(&irow[a..b], &grow[lo..hi]);
                if let Some(g) = gin.as_deref_mut() {
                    axpy(wt, &grow[lo..hi], &mut g[iy * w_in + a..iy * w_in + b]);
                }
            }
        } else {
            for (ox, &go) in grow.iter().enumerate() {
                if let Some(ix) = src_index(ox, kx, stride, pad, w_in) {
                    gw += go * irow[ix];
                    if let Some(g) = gin.as_deref_mut() {
                        g[iy * w_in + ix] += wt * go;
                    }
                }
            }
        }
    }
    gw
}

/// Upper bound on the number of im2col elements materialised at once.
const COLS_BUDGET: usize = 1 << 21;

/// Output rows processed per im2col band.
fn band_rows(k_len: usize, wo: usize, ho: usize) -> usize {
    (COLS_BUDGET / (k_len * wo).max(1)).clamp(1, ho.max(1))
}

/// Unfolds output rows `y0..y1` into `cols[(i, ky, kx)][(oy - y0, ox)]`.
fn im2col<T: Real>(x: &Tensor<T>, k: usize, stride: usize, wo: usize, (y0, y1): (usize, usize), cols: &mut Vec<T>) {
    let pad = k / 2;
    let n = (y1 - y0) * wo;
    cols.clear();
    cols.resize(x.c * k * k * n, T::zero());
    for i in 0..x.c {
        let inp = x.plane(i);
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((i * k + ky) * k + kx) * n..][..n];
                for oy in y0..y1 {
                    let Some(iy) = src_index(oy, ky, stride, pad, x.h) else {
                        continue;
                    };
                    let irow = &inp[iy * x.w..(iy + 1) * x.w];
                    let orow = &mut row[(oy - y0) * wo..(oy - y0 + 1) * wo];
                    if stride == 1 {
                        let (lo, hi) = valid_cols(kx, pad, x.w, wo);
                        if hi > lo {
                            orow[lo..hi].copy_from_slice(&irow[lo + kx - pad..hi + kx - pad]);
                        }
                    } else {
                        for (ox, o) in orow.iter_mut().enumerate() {
                            if let Some(ix) = src_index(ox, kx, stride, pad, x.w) {
                                *o = irow[ix];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters `cols` back onto the input gradient.
fn col2im<T: Real>(gx: &mut Tensor<T>, k: usize, stride: usize, wo: usize, (y0, y1): (usize, usize), cols: &[T]) {
    let pad = k / 2;
    let n = (y1 - y0) * wo;
    let (h, w) = (gx.h, gx.w);
    for i in 0..gx.c {
        let g = gx.plane_mut(i);
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((i * k + ky) * k + kx) * n..][..n];
                for oy in y0..y1 {
                    let Some(iy) = src_index(oy, ky, stride, pad, h) else {
                        continue;
                    };
                    let grow = &mut g[iy * w..(iy + 1) * w];
                    let crow = &row[(oy - y0) * wo..(oy - y0 + 1) * wo];
                    if stride == 1 {
                        let (lo, hi) = valid_cols(kx, pad, w, wo);
                        for (a, &b) in grow[lo + kx - pad..hi + kx - pad].iter_mut().zip(&crow[lo..hi]) {
                            *a += b;
                        }
                    } else {
                        for (ox, &c) in crow.iter().enumerate() {
                            if let Some(ix) = src_index(ox, kx, stride, pad, w) {
                                grow[ix] += c;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Dense convolution with zero padding `k / 2`; weights are `[co][ci][k][k]`.
pub fn conv2d<T: Real>(x: &Tensor<T>, w: &[T], b: &[T], co: usize, k: usize, stride: usize) -> Tensor<T> {
    let (ho, wo) = (conv_out_len(x.h, stride), conv_out_len(x.w, stride));
    let k_len = x.c * k * k;
    let mut out = Tensor::zeros(co, ho, wo);
    for o in 0..co {
        out.plane_mut(o).iter_mut().for_each(|v| *v = b[o]);
    }
    let plane = ho * wo;
    let wmat = Strided {
        data: w,
        row_stride: k_len,
        col_stride: 1,
    };
    if k == 1 && stride == 1 {
        let xm = Strided {
            data: &x.data,
            row_stride: plane,
            col_stride: 1,
        };
        let c = StridedMut {
            data: &mut out.data,
            row_stride: plane,
            col_stride: 1,
        };
        T::gemm(co, k_len, plane, wmat, xm, T::one(), c);
        return out;
    }
    let rows = band_rows(k_len, wo, ho);
    let mut cols = Vec::new();
    for y0 in (0..ho).step_by(rows) {
        let y1 = (y0 + rows).min(ho);
        let n = (y1 - y0) * wo;
        im2col(x, k, stride, wo, (y0, y1), &mut cols);
        let c = StridedMut {
            data: &mut out.data[y0 * wo..],
            row_stride: plane,
            col_stride: 1,
        };
        let cm = Strided {
            data: &cols,
            row_stride: n,
            col_stride: 1,
        };
        T::gemm(co, k_len, n, wmat, cm, T::one(), c);
    }
    out
}

/// Gradients of [`conv2d`]: accumulates into `gw`, `gb`, and optionally `gx`.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    w: &[T],
    gout: &Tensor<T>,
    k: usize,
    stride: usize,
    gw: &mut [T],
    gb: &mut [T],
    mut gx: Option<&mut Tensor<T>>,
) {
    let co = gout.c;
    let (ho, wo) = (gout.h, gout.w);
    let plane = ho * wo;
    let k_len = x.c * k * k;
    for o in 0..co {
        gb[o] += gout.plane(o).iter().copied().sum::<T>();
    }
    let wt = Strided {
        data: w,
        row_stride: 1,
        col_stride: k_len,
    };
    if k == 1 && stride == 1 {
        let g = Strided {
            data: &gout.data,
            row_stride: plane,
            col_stride: 1,
        };
        let xt = Strided {
            data: &x.data,
            row_stride: 1,
            col_stride: plane,
        };
        let gwm = StridedMut {
            data: gw,
            row_stride: k_len,
            col_stride: 1,
        };
        T::gemm(co, plane, k_len, g, xt, T::one(), gwm);
        if let Some(gx) = gx {
            let c = StridedMut {
                data: &mut gx.data,
                row_stride: plane,
                col_stride: 1,
            };
            T::gemm(k_len, co, plane, wt, g, T::one(), c);
        }
        return;
    }
    let rows = band_rows(k_len, wo, ho);
    let mut cols = Vec::new();
    let mut gcols = Vec::new();
    for y0 in (0..ho).step_by(rows) {
        let y1 = (y0 + rows).min(ho);
        let n = (y1 - y0) * wo;
        im2col(x, k, stride, wo, (y0, y1), &mut cols);
        let g = Strided {
            data: &gout.data[y0 * wo..],
            row_stride: plane,
            col_stride: 1,
        };
        let ct = Strided {
            data: &cols,
            row_stride: 1,
            col_stride: n,
        };
        let gwm = StridedMut {
            data: &mut *gw,
            row_stride: k_len,
            col_stride: 1,
        };
        T::gemm(co, n, k_len, g, ct, T::one(), gwm);
        if let Some(gx) = gx.as_deref_mut() {
            gcols.clear();
            gcols.resize(k_len * n, T::zero());
            let c = StridedMut {
                data: &mut gcols,
                row_stride: n,
                col_stride: 1,
            };
            T::gemm(k_len, co, n, wt, g, T::zero(), c);
            col2im(gx, k, stride, wo, (y0, y1), &gcols);
        }
    }
}

/// Per-channel 3x3 convolution without bias; weights are `[c][3][3]`.
pub fn depthwise3x3<T: Real>(x: &Tensor<T>, w: &[T], stride: usize) -> Tensor<T> {
    let (ho, wo) = (conv_out_len(x.h, stride), conv_out_len(x.w, stride));
    let mut out = Tensor::zeros(x.c, ho, wo);
    for c in 0..x.c {
        let inp = x.plane(c);
        let oplane = out.plane_mut(c);
        for ky in 0..3 {
            for kx in 0..3 {
                let wt = w[(c * 3 + ky) * 3 + kx];
                tap_forward(wt, inp, oplane, (x.h, x.w), (ho, wo), (ky, kx), stride, 1);
            }
        }
    }
    out
}

pub fn depthwise3x3_backward<T: Real>(
    x: &Tensor<T>,
    w: &[T],
    gout: &Tensor<T>,
    stride: usize,
    gw: &mut [T],
    mut gx: Option<&mut Tensor<T>>,
) {
    for c in 0..x.c {
        let inp = x.plane(c);
        let gplane = gout.plane(c);
        for ky in 0..3 {
            for kx in 0..3 {
                let idx = (c * 3 + ky) * 3 + kx;
                let gin = gx.as_deref_mut().map(|g| g.plane_mut(c));
                gw[idx] += tap_backward(w[idx], inp, gplane, gin, (x.h, x.w), (gout.h, gout.w), (ky, kx), stride, 1);
            }
        }
    }
}

pub fn relu_in_place<T: Real>(x: &mut Tensor<T>) {
    for v in x.data.iter_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Zeroes gradient entries where the (post-activation) output was clipped.
pub fn relu_backward_in_place<T: Real>(out: &Tensor<T>, grad: &mut Tensor<T>) {
    for (g, &o) in grad.data.iter_mut().zip(&out.data) {
        if o <= T::zero() {
            *g = T::zero();
        }
    }
}

/// Source taps of 2x bilinear upsampling (half-pixel centers, edge clamped)
/// for output index `o`: `(i0, i1, w0, w1)`.
#[inline]
fn up_taps(o: usize, len: usize) -> (usize, usize, f64, f64) {
    let i = o / 2;
    if o % 2 == 0 {
        (i.saturating_sub(1), i, 0.25, 0.75)
    } else {
        (i, (i + 1).min(len - 1), 0.75, 0.25)
    }
}

/// Bilinear 2x upsampling.
pub fn upsample2x<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let (ho, wo) = (2 * x.h, 2 * x.w);
    let mut out = Tensor::zeros(x.c, ho, wo);
    let cols: Vec<_> = (0..wo).map(|o| up_taps(o, x.w)).collect();
    let mut tmp = vec![T::zero(); wo];
    for c in 0..x.c {
        let inp = x.plane(c);
        let oplane = out.plane_mut(c);
        for oy in 0..ho {
            let (r0, r1, a0, a1) = up_taps(oy, x.h);
            let (a0, a1) = (T::of(a0), T::of(a1));
            let (row0, row1) = (&inp[r0 * x.w..(r0 + 1) * x.w], &inp[r1 * x.w..(r1 + 1) * x.w]);
            for (t, &(c0, c1, b0, b1)) in tmp.iter_mut().zip(&cols) {
                let v0 = T::of(b0) * row0[c0] + T::of(b1) * row0[c1];
                let v1 = T::of(b0) * row1[c0] + T::of(b1) * row1[c1];
                *t = a0 * v0 + a1 * v1;
            }
            oplane[oy * wo..(oy + 1) * wo].copy_from_slice(&tmp);
        }
    }
    out
}

/// Adjoint of [`upsample2x`]; `h, w` is the size of the upsampled input.
pub fn upsample2x_backward<T: Real>(g: &Tensor<T>, h: usize, w: usize) -> Tensor<T> {
    let mut out = Tensor::zeros(g.c, h, w);
    let cols: Vec<_> = (0..g.w).map(|o| up_taps(o, w)).collect();
    for c in 0..g.c {
        let gp = g.plane(c);
        let op = out.plane_mut(c);
        for oy in 0..g.h {
            let (r0, r1, a0, a1) = up_taps(oy, h);
            for (ox, &(c0, c1, b0, b1)) in cols.iter().enumerate() {
                let v = gp[oy * g.w + ox];
                op[r0 * w + c0] += T::of(a0 * b0) * v;
                op[r0 * w + c1] += T::of(a0 * b1) * v;
                op[r1 * w + c0] += T::of(a1 * b0) * v;
                op[r1 * w + c1] += T::of(a1 * b1) * v;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg(n: usize, seed: u64) -> Vec<f64> {
        let mut s = seed;
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
            })
            .collect()
    }

    fn tensor(c: usize, h: usize, w: usize, seed: u64) -> Tensor<f64> {
        Tensor {
            c,
            h,
            w,
            data: lcg(c * h * w, seed),
        }
    }

    fn naive_conv(x: &Tensor<f64>, w: &[f64], b: &[f64], co: usize, k: usize, s: usize) -> Tensor<f64> {
        let (ho, wo) = (x.h.div_ceil(s), x.w.div_ceil(s));
        let p = (k / 2) as isize;
        let mut out = Tensor::zeros(co, ho, wo);
        for o in 0..co {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = b[o];
                    for i in 0..x.c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * s + ky) as isize - p;
                                let ix = (ox * s + kx) as isize - p;
                                if iy >= 0 && ix >= 0 && (iy as usize) < x.h && (ix as usize) < x.w {
                                    acc += w[((o * x.c + i) * k + ky) * k + kx]
                                        * x.data[(i * x.h + iy as usize) * x.w + ix as usize];
                                }
                            }
                        }
                    }
                    out.data[(o * ho + oy) * wo + ox] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_naive() {
        for (k, s, h, w) in [(3, 1, 7, 9), (3, 2, 8, 6), (3, 2, 7, 5), (1, 1, 4, 5)] {
            let x = tensor(3, h, w, 1);
            let wt = lcg(2 * 3 * k * k, 2);
            let b = lcg(2, 3);
            let fast = conv2d(&x, &wt, &b, 2, k, s);
            let slow = naive_conv(&x, &wt, &b, 2, k, s);
            for (a, b) in fast.data.iter().zip(&slow.data) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    /// `<A x, y> == <x, A^T y>` for the linear parts of each op.
    #[test]
    fn adjoint_identities() {
        for (k, s, h, w) in [(3, 1, 6, 7), (3, 2, 8, 8), (3, 2, 5, 7), (1, 1, 3, 4)] {
            let x = tensor(2, h, w, 4);
            let wt = lcg(3 * 2 * k * k, 5);
            let y = conv2d(&x, &wt, &[0.0; 3], 3, k, s);
            let g = tensor(3, y.h, y.w, 6);
            let mut gx = Tensor::zeros(2, h, w);
            let mut gw = vec![0.0; wt.len()];
            let mut gb = vec![0.0; 3];
            conv2d_backward(&x, &wt, &g, k, s, &mut gw, &mut gb, Some(&mut gx));
            let lhs: f64 = y.data.iter().zip(&g.data).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.data.iter().zip(&gx.data).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-10);
            let rhs_w: f64 = wt.iter().zip(&gw).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs_w).abs() < 1e-10);
        }
        let x = tensor(2, 5, 3, 7);
        let y = upsample2x(&x);
        let g = tensor(2, 10, 6, 8);
        let gx = upsample2x_backward(&g, 5, 3);
        let lhs: f64 = y.data.iter().zip(&g.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data.iter().zip(&gx.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
        for s in [1, 2] {
            let x = tensor(3, 6, 5, 9);
            let wt = lcg(27, 10);
            let y = depthwise3x3(&x, &wt, s);
            let g = tensor(3, y.h, y.w, 11);
            let mut gx = Tensor::zeros(3, 6, 5);
            let mut gw = vec![0.0; 27];
            depthwise3x3_backward(&x, &wt, &g, s, &mut gw, Some(&mut gx));
            let lhs: f64 = y.data.iter().zip(&g.data).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.data.iter().zip(&gx.data).map(|(a, b)| a * b).sum();
            let rhs_w: f64 = wt.iter().zip(&gw).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-12 && (lhs - rhs_w).abs() < 1e-12);
        }
    }

    #[test]
    fn upsample_preserves_constants_and_ramps() {
        let x = Tensor {
            c: 1,
            h: 1,
            w: 4,
            data: vec![0.0, 1.0, 2.0, 3.0],
        };
        let y = upsample2x(&x);
        assert_eq!(y.data[..8], [0.0, 0.25, 0.75, 1.25, 1.75, 2.25, 2.75, 3.0]);
    }
}
