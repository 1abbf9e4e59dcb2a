use crate::error::{Error, Result};
use crate::imagecore::{resample_plane, sample_bilinear};

use super::{FlowEstimator, FlowEstimatorConfig};

/// Smallest side of the coarsest pyramid level.
const MIN_LEVEL_SIDE: usize = 8;
/// The coarse search only trusts shifts that keep this much of the image overlapping.
const MIN_SEARCH_OVERLAP: f64 = 0.5;

/// Coarse-to-fine inverse-compositional Lucas-Kanade on overlapping blocks.
/// The coarsest level is seeded by an exhaustive integer translation search.
#[derive(Debug, Clone)]
pub struct PyramidalLk {
    cfg: FlowEstimatorConfig,
}

struct Level {
    w: usize,
    h: usize,
    a: Vec<f32>,
    b: Vec<f32>,
}

fn downsample_plane(src: &[f32], w: usize, h: usize) -> (Vec<f32>, usize, usize) {
    let (nw, nh) = (w.div_ceil(2), h.div_ceil(2));
    let mut out = Vec::with_capacity(nw * nh);
    for y in 0..nh {
        let (y0, y1) = (2 * y, (2 * y + 1).min(h - 1));
        for x in 0..nw {
            let (x0, x1) = (2 * x, (2 * x + 1).min(w - 1));
            out.push(0.25 * (src[y0 * w + x0] + src[y0 * w + x1] + src[y1 * w + x0] + src[y1 * w + x1]));
        }
    }
    (out, nw, nh)
}

fn gradients(p: &[f32], w: usize, h: usize) -> (Vec<f32>, Vec<f32>) {
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let (xl, xr) = (x.saturating_sub(1), (x + 1).min(w - 1));
            let (yu, yd) = (y.saturating_sub(1), (y + 1).min(h - 1));
            if xr > xl {
                gx[y * w + x] = (p[y * w + xr] - p[y * w + xl]) / (xr - xl) as f32;
            }
            if yd > yu {
                gy[y * w + x] = (p[yd * w + x] - p[yu * w + x]) / (yd - yu) as f32;
            }
        }
    }
    (gx, gy)
}

/// Uniform grid of block windows along one axis: `(start, end, center)`.
fn block_axis(len: usize, block: usize) -> Vec<(usize, usize, f32)> {
    let stride = (block / 2).max(1);
    let n = if len <= block { 1 } else { (len - block).div_ceil(stride) + 1 };
    (0..n)
        .map(|i| {
            let x0 = i * stride;
            let x1 = (x0 + block).min(len);
            (x0, x1, x0 as f32 + (block.min(len) as f32 - 1.0) / 2.0)
        })
        .collect()
}

fn catmull_rom(p: [f32; 4], t: f32) -> f32 {
    let t2 = t * t;
    let t3 = t2 * t;
    0.5 * (2.0 * p[1]
        + (p[2] - p[0]) * t
        + (2.0 * p[0] - 5.0 * p[1] + 4.0 * p[2] - p[3]) * t2
        + (3.0 * p[1] - p[0] - 3.0 * p[2] + p[3]) * t3)
}

/// Bicubic interpolation of a block grid onto every pixel.
fn interpolate_grid(grid: &[f32], nx: usize, ny: usize, xs: &[f32], ys: &[f32]) -> Vec<f32> {
    // Out-of-grid samples are linearly extrapolated so ramps survive at the borders.
    let ghost = |n: usize, k: isize| -> (usize, usize, f32) {
        let last = n as isize - 1;
        if n < 2 || (0..=last).contains(&k) {
            let k = k.clamp(0, last) as usize;
            (k, k, 0.0)
        } else if k < 0 {
            (0, 1, (-k) as f32)
        } else {
            (last as usize, last as usize - 1, (k - last) as f32)
        }
    };
    let at1 = |i: isize, j: usize| {
        let (a, b, t) = ghost(nx, i);
        grid[j * nx + a] + t * (grid[j * nx + a] - grid[j * nx + b])
    };
    let at = |i: isize, j: isize| {
        let (a, b, t) = ghost(ny, j);
        at1(i, a) + t * (at1(i, a) - at1(i, b))
    };
    let mut out = Vec::with_capacity(xs.len() * ys.len());
    for &gy in ys {
        let gy = gy.clamp(0.0, (ny - 1) as f32);
        let j = gy.floor() as isize;
        let ty = gy - j as f32;
        for &gx in xs {
            let gx = gx.clamp(0.0, (nx - 1) as f32);
            let i = gx.floor() as isize;
            let tx = gx - i as f32;
            let rows = [-1, 0, 1, 2].map(|dj| catmull_rom([-1, 0, 1, 2].map(|di| at(i + di, j + dj)), tx));
            out.push(catmull_rom(rows, ty));
        }
    }
    out
}

impl PyramidalLk {
    pub fn new(cfg: FlowEstimatorConfig) -> Self {
        Self { cfg }
    }

    fn pyramid(&self, a: &[f32], b: &[f32], w: usize, h: usize) -> Vec<Level> {
        let mut levels = vec![Level {
            w,
            h,
            a: a.to_vec(),
            b: b.to_vec(),
        }];
        while levels.len() < self.cfg.pyramid_levels {
            let last = levels.last().unwrap();
            if last.w.div_ceil(2) < MIN_LEVEL_SIDE || last.h.div_ceil(2) < MIN_LEVEL_SIDE {
                break;
            }
            let (na, nw, nh) = downsample_plane(&last.a, last.w, last.h);
            let (nb, _, _) = downsample_plane(&last.b, last.w, last.h);
            levels.push(Level { w: nw, h: nh, a: na, b: nb });
        }
        levels
    }

    /// Integer translation minimizing the mean squared difference over the overlap.
    fn coarse_search(&self, lv: &Level) -> (f32, f32) {
        let r = self.cfg.coarse_search_px as isize;
        let (w, h) = (lv.w as isize, lv.h as isize);
        let mut candidates: Vec<(isize, isize)> = (-r..=r).flat_map(|dy| (-r..=r).map(move |dx| (dx, dy))).collect();
        candidates.sort_by_key(|&(dx, dy)| (dx * dx + dy * dy, dy, dx));
        let mut best = (0.0, 0.0);
        let mut best_cost = f64::INFINITY;
        for (dx, dy) in candidates {
            let (ox, oy) = (w - dx.abs(), h - dy.abs());
            if ox <= 0 || oy <= 0 || ((ox * oy) as f64) < MIN_SEARCH_OVERLAP * (w * h) as f64 {
                continue;
            }
            let mut sum = 0.0f64;
            for y in 0.max(-dy)..h.min(h - dy) {
                for x in 0.max(-dx)..w.min(w - dx) {
                    let d = lv.b[((y + dy) * w + x + dx) as usize] - lv.a[(y * w + x) as usize];
                    sum += (d * d) as f64;
                }
            }
            let cost = sum / (ox * oy) as f64;
            if cost < best_cost {
                best_cost = cost;
                best = (dx as f32, dy as f32);
            }
        }
        best
    }

    fn refine(&self, lv: &Level, u: &mut Vec<f32>, v: &mut Vec<f32>) {
        let (w, h) = (lv.w, lv.h);
        let (gx, gy) = gradients(&lv.a, w, h);
        let bx = block_axis(w, self.cfg.block_size);
        let by = block_axis(h, self.cfg.block_size);
        let (nx, ny) = (bx.len(), by.len());
        let mut pu = vec![0.0f32; nx * ny];
        let mut pv = vec![0.0f32; nx * ny];
        let mut conf = vec![0.0f64; nx * ny];
        let (wmax, hmax) = ((w - 1) as f32, (h - 1) as f32);
        for (j, &(y0, y1, cy)) in by.iter().enumerate() {
            for (i, &(x0, x1, cx)) in bx.iter().enumerate() {
                let mut p = [sample_bilinear(u, w, h, cx, cy), sample_bilinear(v, w, h, cx, cy)];
                let area = ((x1 - x0) * (y1 - y0)) as f64;
                let lambda = self.cfg.regularization * area;
                let mut c = 0.0;
                for _ in 0..self.cfg.iterations_per_level.max(1) {
                    let (mut hxx, mut hxy, mut hyy, mut rx, mut ry, mut n) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64, 0usize);
                    for y in y0..y1 {
                        let sy = y as f32 + p[1];
                        if sy < 0.0 || sy > hmax {
                            continue;
                        }
                        for x in x0..x1 {
                            let sx = x as f32 + p[0];
                            if sx < 0.0 || sx > wmax {
                                continue;
                            }
                            let k = y * w + x;
                            let r = (sample_bilinear(&lv.b, w, h, sx, sy) - lv.a[k]) as f64;
                            let (ax, ay) = (gx[k] as f64, gy[k] as f64);
                            hxx += ax * ax;
                            hxy += ax * ay;
                            hyy += ay * ay;
                            rx += ax * r;
                            ry += ay * r;
                            n += 1;
                        }
                    }
                    if (n as f64) < 0.25 * area {
                        c = 0.0;
                        break;
                    }
                    let tr = hxx + hyy;
                    let det0 = hxx * hyy - hxy * hxy;
                    c = (0.5 * tr - (0.25 * tr * tr - det0).max(0.0).sqrt()) / n as f64;
                    let (a11, a22) = (hxx + lambda, hyy + lambda);
                    let det = a11 * a22 - hxy * hxy;
                    if det <= 0.0 {
                        break;
                    }
                    let du = (a22 * rx - hxy * ry) / det;
                    let dv = (a11 * ry - hxy * rx) / det;
                    p[0] -= du as f32;
                    p[1] -= dv as f32;
                    if du * du + dv * dv < 1e-6 {
                        break;
                    }
                }
                pu[j * nx + i] = p[0];
                pv[j * nx + i] = p[1];
                conf[j * nx + i] = c;
            }
        }
        // Confidence-weighted 3x3 smoothing; textureless blocks borrow from neighbors.
        let eps = 1e-12;
        let mut su = pu.clone();
        let mut sv = pv.clone();
        for j in 0..ny {
            for i in 0..nx {
                let (mut au, mut av, mut aw) = (0.0f64, 0.0f64, 0.0f64);
                for dj in -1isize..=1 {
                    for di in -1isize..=1 {
                        let (ii, jj) = (i as isize + di, j as isize + dj);
                        if ii < 0 || jj < 0 || ii >= nx as isize || jj >= ny as isize {
                            continue;
                        }
                        let k = jj as usize * nx + ii as usize;
                        let spatial = if di == 0 && dj == 0 { 4.0 } else if di == 0 || dj == 0 { 2.0 } else { 1.0 };
                        let wgt = spatial * (conf[k] + eps);
                        au += wgt * pu[k] as f64;
                        av += wgt * pv[k] as f64;
                        aw += wgt;
                    }
                }
                su[j * nx + i] = (au / aw) as f32;
                sv[j * nx + i] = (av / aw) as f32;
            }
        }
        let stride = (self.cfg.block_size / 2).max(1) as f32;
        let xs: Vec<f32> = (0..w).map(|x| (x as f32 - bx[0].2) / stride).collect();
        let ys: Vec<f32> = (0..h).map(|y| (y as f32 - by[0].2) / stride).collect();
        *u = interpolate_grid(&su, nx, ny, &xs, &ys);
        *v = interpolate_grid(&sv, nx, ny, &xs, &ys);
        let limit = self.cfg.max_displacement_frac as f32 * w.max(h) as f32;
        for (a, b) in u.iter_mut().zip(v.iter_mut()) {
            let m = (*a * *a + *b * *b).sqrt();
            if m > limit {
                *a *= limit / m;
                *b *= limit / m;
            }
        }
    }
}

impl FlowEstimator for PyramidalLk {
    fn estimate(&self, a: &[f32], b: &[f32], w: usize, h: usize) -> Result<(Vec<f32>, Vec<f32>)> {
        if w < MIN_LEVEL_SIDE || h < MIN_LEVEL_SIDE {
            return Err(Error::invalid(format!(
                "{w}x{h} is too small for flow estimation (need at least {MIN_LEVEL_SIDE}x{MIN_LEVEL_SIDE})"
            )));
        }
        if a.len() != w * h || b.len() != w * h {
            return Err(Error::invalid("flow input planes do not match the stated size"));
        }
        let levels = self.pyramid(a, b, w, h);
        let coarsest = levels.last().unwrap();
        let (tu, tv) = self.coarse_search(coarsest);
        let mut u = vec![tu; coarsest.w * coarsest.h];
        let mut v = vec![tv; coarsest.w * coarsest.h];
        let (mut cw, mut ch) = (coarsest.w, coarsest.h);
        for lv in levels.iter().rev() {
            if (lv.w, lv.h) != (cw, ch) {
                let (rx, ry) = (lv.w as f32 / cw as f32, lv.h as f32 / ch as f32);
                u = resample_plane(&u, cw, ch, lv.w, lv.h).into_iter().map(|x| x * rx).collect();
                v = resample_plane(&v, cw, ch, lv.w, lv.h).into_iter().map(|x| x * ry).collect();
                (cw, ch) = (lv.w, lv.h);
            }
            self.refine(lv, &mut u, &mut v);
        }
        Ok((u, v))
    }
}
