use dualcam_core::fusionnet::{gradients, loss, FusionInputs, FusionNetParams, LossConfig, NetConfig, Tape};
use dualcam_core::imagecore::{LinearImage, MaskImage};

fn inputs(w: usize, h: usize) -> (FusionInputs, LinearImage) {
    let source = LinearImage::from_fn(w, h, |x, y| {
        let (x, y) = (x as f32, y as f32);
        [0.4 + 0.2 * (0.9 * x).sin(), 0.5 + 0.15 * (0.7 * y + x).cos(), 0.3 + 0.01 * x * y]
    });
    let gt = LinearImage::from_fn(w, h, |x, y| {
        let (x, y) = (x as f32, y as f32);
        [0.45 + 0.3 * (0.9 * x).sin(), 0.5 + 0.25 * (0.7 * y + x).cos(), 0.31 + 0.012 * x * y]
    });
    let inputs = FusionInputs {
        reference_warped: LinearImage::from_fn(w / 2, h / 2, |x, y| {
            [0.2 + 0.1 * x as f32, 0.5 - 0.05 * y as f32, 0.4 + 0.03 * (x * y) as f32]
        }),
        source,
        face_mask: MaskImage::from_fn(w / 2, h / 2, |x, _| if x > 1 { 1.0 } else { 0.3 }),
        occlusion_mask: MaskImage::from_fn(w / 2, h / 2, |x, y| 0.1 * ((x + y) % 3) as f32),
    };
    (inputs, gt)
}

fn loss_f64(p: &FusionNetParams<f64>, inp: &FusionInputs, gt: &LinearImage, cfg: &LossConfig) -> f64 {
    let (src, stack) = inp.tensors::<f64>();
    let tape = Tape::run(p, src.clone(), stack);
    let (gt_t, _) = FusionInputs {
        source: gt.clone(),
        ..inp.clone()
    }
    .tensors::<f64>();
    loss(tape.output(), &gt_t, &src, cfg).total
}

fn check(cfg: NetConfig) {
    let (inp, gt) = inputs(8, 8);
    let mut p = FusionNetParams::<f32>::init(&cfg, 11).unwrap().convert::<f64>();
    // Give the zero-initialised output layer and biases non-trivial values.
    for (i, v) in p.data.iter_mut().enumerate() {
        *v += 0.05 * ((i * 7919 % 23) as f64 / 23.0 - 0.5);
    }
    let lcfg = LossConfig::default();
    let (_, g) = gradients(&p, &inp, &gt, &lcfg).unwrap();
    let eps = 1e-3;
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    for i in (0..p.len()).step_by(3) {
        let mut plus = p.clone();
        plus.data[i] += eps;
        let mut minus = p.clone();
        minus.data[i] -= eps;
        let numeric = (loss_f64(&plus, &inp, &gt, &lcfg) - loss_f64(&minus, &inp, &gt, &lcfg)) / (2.0 * eps);
        let analytic = g.data[i];
        let scale = numeric.abs().max(analytic.abs());
        if scale < 1e-6 {
            continue;
        }
        let rel = (numeric - analytic).abs() / scale;
        // A kink (ReLU or |.|) inside the finite-difference interval breaks the
        // comparison; confirm with a smaller step before counting a mismatch.
        let rel = if rel > 1e-4 {
            let e2 = 1e-6;
            let mut plus = p.clone();
            plus.data[i] += e2;
            let mut minus = p.clone();
            minus.data[i] -= e2;
            let n2 = (loss_f64(&plus, &inp, &gt, &lcfg) - loss_f64(&minus, &inp, &gt, &lcfg)) / (2.0 * e2);
            (n2 - analytic).abs() / n2.abs().max(analytic.abs())
        } else {
            rel
        };
        worst = worst.max(rel);
        assert!(rel < 1e-4, "param {i} ({}): analytic {analytic} numeric {numeric}", tensor_name(&p, i));
        checked += 1;
    }
    assert!(checked > 50, "only {checked} parameters had measurable gradients");
}

fn tensor_name(p: &FusionNetParams<f64>, i: usize) -> String {
    (0..p.tensors.len())
        .find(|&t| p.tensor_range(t).contains(&i))
        .map(|t| p.tensors[t].name.clone())
        .unwrap_or_default()
}

#[test]
fn gradients_match_finite_differences() {
    check(NetConfig {
        channels: vec![4, 4],
        depthwise_separable: false,
        residual_scale: 0.7,
    });
}

#[test]
fn separable_gradients_match_finite_differences() {
    check(NetConfig {
        channels: vec![4, 4],
        depthwise_separable: true,
        residual_scale: 0.7,
    });
}

#[test]
fn three_level_gradients_match_finite_differences() {
    check(NetConfig {
        channels: vec![3, 4, 5],
        depthwise_separable: false,
        residual_scale: 0.7,
    });
}
