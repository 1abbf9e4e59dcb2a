//! Compares the graph-based forward pass with a direct, loop-by-loop
//! evaluation of the same architecture written without the tape machinery.

use dualcam_core::fusionnet::{forward, FusionInputs, FusionNetParams, NetConfig};
use dualcam_core::imagecore::{LinearImage, MaskImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Map = Vec<Vec<Vec<f64>>>; // [channel][row][col]

fn conv(p: &FusionNetParams<f32>, name: &str, x: &Map, stride: usize, relu: bool) -> Map {
    let get = |suffix: &str| -> Vec<f64> {
        let i = p.tensor_index(&format!("{name}.{suffix}")).expect("tensor exists");
        p.tensor(i).iter().map(|&v| v as f64).collect()
    };
    let w_idx = p.tensor_index(&format!("{name}.w")).unwrap();
    let shape = p.tensors[w_idx].shape.clone();
    let (co, ci, k) = (shape[0], shape[1], shape[2]);
    let (w, b) = (get("w"), get("b"));
    let (h_in, w_in) = (x[0].len(), x[0][0].len());
    let pad = (k / 2) as isize;
    let (h_out, w_out) = (h_in.div_ceil(stride), w_in.div_ceil(stride));
    let mut out = vec![vec![vec![0.0; w_out]; h_out]; co];
    for o in 0..co {
        for oy in 0..h_out {
            for ox in 0..w_out {
                let mut acc = b[o];
                for c in 0..ci {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * stride) as isize + ky as isize - pad;
                            let ix = (ox * stride) as isize + kx as isize - pad;
                            if iy < 0 || ix < 0 || iy >= h_in as isize || ix >= w_in as isize {
                                continue;
                            }
                            acc += w[((o * ci + c) * k + ky) * k + kx] * x[c][iy as usize][ix as usize];
                        }
                    }
                }
                out[o][oy][ox] = if relu { acc.max(0.0) } else { acc };
            }
        }
    }
    out
}

fn upsample(x: &Map) -> Map {
    let (h, w) = (x[0].len(), x[0][0].len());
    let coord = |i: usize, n: usize| -> (usize, usize, f64) {
        let s = ((i as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = s.floor() as usize;
        (i0, (i0 + 1).min(n - 1), s - i0 as f64)
    };
    x.iter()
        .map(|plane| {
            (0..2 * h)
                .map(|oy| {
                    let (y0, y1, fy) = coord(oy, h);
                    (0..2 * w)
                        .map(|ox| {
                            let (x0, x1, fx) = coord(ox, w);
                            let top = plane[y0][x0] * (1.0 - fx) + plane[y0][x1] * fx;
                            let bot = plane[y1][x0] * (1.0 - fx) + plane[y1][x1] * fx;
                            top * (1.0 - fy) + bot * fy
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

fn add(a: &Map, b: &Map) -> Map {
    a.iter()
        .zip(b)
        .map(|(pa, pb)| pa.iter().zip(pb).map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| x + y).collect()).collect())
        .collect()
}

fn planes(data: &[f32], c: usize, w: usize, h: usize) -> Map {
    (0..c)
        .map(|ch| (0..h).map(|y| (0..w).map(|x| data[(ch * h + y) * w + x] as f64).collect()).collect())
        .collect()
}

fn reference_forward(p: &FusionNetParams<f32>, inp: &FusionInputs) -> Map {
    let (w, h) = inp.source.size();
    let src = planes(&inp.source.data, 3, w, h);
    let mut stack = planes(&inp.reference_warped.data, 3, w / 2, h / 2);
    stack.extend(planes(&inp.face_mask.data, 1, w / 2, h / 2));
    stack.extend(planes(&inp.occlusion_mask.data, 1, w / 2, h / 2));

    let levels = p.config.channels.len();
    let s1 = conv(p, "enc1", &src, 1, true);
    let down = conv(p, "down1", &s1, 2, true);
    let r = conv(p, "ref1", &stack, 1, true);
    let r = conv(p, "ref_fuse", &r, 1, true);
    let mut x = add(&down, &r);
    let mut skips = vec![s1];
    for k in 2..levels {
        let s = conv(p, &format!("enc{k}"), &x, 1, true);
        x = conv(p, &format!("down{k}"), &s, 2, true);
        skips.push(s);
    }
    for k in (2..=levels).rev() {
        let a = conv(p, &format!("dec{k}a"), &x, 1, true);
        let b = conv(p, &format!("dec{k}b"), &a, 1, true);
        x = add(&upsample(&b), &skips[k - 2]);
    }
    let d = conv(p, "dec1", &x, 1, true);
    let o = conv(p, "out", &d, 1, false);
    let scale = p.config.residual_scale;
    let scaled: Map = o.iter().map(|pl| pl.iter().map(|r| r.iter().map(|v| scale * v).collect()).collect()).collect();
    add(&scaled, &src)
}

#[test]
fn graph_forward_matches_direct_evaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut p = FusionNetParams::<f32>::init(&NetConfig::default(), 9).unwrap();
    // Perturb everything, including the zero-initialised output layer and biases.
    for v in p.data.iter_mut() {
        *v = *v * 0.6 + rng.random_range(-0.05..0.05);
    }
    let n = 64;
    let mut img = |w: usize, h: usize| LinearImage::from_fn(w, h, |_, _| [rng.random(), rng.random(), rng.random()]);
    let source = img(n, n);
    let reference_warped = img(n / 2, n / 2);
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let inputs = FusionInputs {
        source,
        reference_warped,
        face_mask: MaskImage::from_fn(n / 2, n / 2, |_, _| rng.random()),
        occlusion_mask: MaskImage::from_fn(n / 2, n / 2, |_, _| rng.random()),
    };
    let got = forward(&p, &inputs).unwrap();
    let want = reference_forward(&p, &inputs);
    let mut worst: f64 = 0.0;
    for c in 0..3 {
        for y in 0..n {
            for x in 0..n {
                worst = worst.max((got.get(c, x, y) as f64 - want[c][y][x]).abs());
            }
        }
    }
    assert!(worst < 1e-5, "max abs difference {worst}");
    let moved = (0..3 * n * n).filter(|&i| got.data[i] != inputs.source.data[i]).count();
    assert!(moved > n * n, "network output should differ from the source");
}
