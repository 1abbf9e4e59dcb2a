use crate::error::{Error, Result};
use crate::imagecore::{LinearImage, MaskImage};
use crate::real::Real;

use super::ops::{
    conv2d, conv2d_backward, depthwise3x3, depthwise3x3_backward, relu_backward_in_place, relu_in_place, upsample2x,
    upsample2x_backward, Tensor,
};
use super::params::{ConvSpec, FusionNetParams, NetConfig};

/// Network inputs; the reference stack is half the source size.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionInputs {
    pub source: LinearImage,
    pub reference_warped: LinearImage,
    pub face_mask: MaskImage,
    pub occlusion_mask: MaskImage,
}

impl FusionInputs {
    pub fn validate(&self, cfg: &NetConfig) -> Result<()> {
        let (w, h) = self.source.size();
        let m = cfg.size_multiple();
        if w == 0 || h == 0 || w % m != 0 || h % m != 0 {
            return Err(Error::invalid(format!("source size {w}x{h} must be a positive multiple of {m}")));
        }
        let half = (w / 2, h / 2);
        for (what, size) in [
            ("reference", self.reference_warped.size()),
            ("face mask", self.face_mask.size()),
            ("occlusion mask", self.occlusion_mask.size()),
        ] {
            if size != half {
                return Err(Error::SizeMismatch {
                    what,
                    expected: half,
                    actual: size,
                });
            }
        }
        Ok(())
    }

    /// `(source, reference stack)` as network tensors.
    pub fn tensors<T: Real>(&self) -> (Tensor<T>, Tensor<T>) {
        let conv = |v: &[f32]| v.iter().map(|&x| T::of(x as f64)).collect::<Vec<T>>();
        let (w, h) = self.source.size();
        let src = Tensor {
            c: 3,
            h,
            w,
            data: conv(&self.source.data),
        };
        let mut data = conv(&self.reference_warped.data);
        data.extend(conv(&self.face_mask.data));
        data.extend(conv(&self.occlusion_mask.data));
        let stack = Tensor {
            c: 5,
            h: h / 2,
            w: w / 2,
            data,
        };
        (src, stack)
    }

    /// Copy with the face mask replaced by zeros.
    pub fn without_face_mask(&self) -> Self {
        let mut out = self.clone();
        out.face_mask.data.iter_mut().for_each(|v| *v = 0.0);
        out
    }
}

#[derive(Debug, Clone, Copy)]
enum Node {
    Source,
    ReferenceStack,
    Conv { layer: usize, input: usize, relu: bool },
    Up { input: usize },
    Add { a: usize, b: usize },
    /// `source + scale * prediction`.
    Residual { prediction: usize },
}

/// Builds the encoder-decoder graph; the last node is the output.
fn build_graph(cfg: &NetConfig) -> Vec<Node> {
    let levels = cfg.levels();
    let mut nodes = vec![Node::Source, Node::ReferenceStack];
    let mut layer = 0;
    let push = |nodes: &mut Vec<Node>, n: Node| {
        nodes.push(n);
        nodes.len() - 1
    };
    let mut conv = |nodes: &mut Vec<Node>, input: usize, relu: bool| {
        let n = Node::Conv { layer, input, relu };
        layer += 1;
        nodes.push(n);
        nodes.len() - 1
    };
    let s1 = conv(&mut nodes, 0, true);
    let down = conv(&mut nodes, s1, true);
    let r = conv(&mut nodes, 1, true);
    let r = conv(&mut nodes, r, true);
    let mut x = push(&mut nodes, Node::Add { a: down, b: r });
    let mut skips = vec![s1];
    for _ in 2..levels {
        let s = conv(&mut nodes, x, true);
        skips.push(s);
        x = conv(&mut nodes, s, true);
    }
    for k in (2..=levels).rev() {
        let a = conv(&mut nodes, x, true);
        let b = conv(&mut nodes, a, true);
        let u = push(&mut nodes, Node::Up { input: b });
        x = push(&mut nodes, Node::Add { a: u, b: skips[k - 2] });
    }
    let d = conv(&mut nodes, x, true);
    let o = conv(&mut nodes, d, false);
    push(&mut nodes, Node::Residual { prediction: o });
    nodes
}

/// Activations of one forward pass, kept for the backward pass.
pub struct Tape<T> {
    nodes: Vec<Node>,
    values: Vec<Tensor<T>>,
    /// Depthwise outputs of separable convolutions.
    aux: Vec<Option<Tensor<T>>>,
}

fn apply_conv<T: Real>(
    p: &FusionNetParams<T>,
    spec: &ConvSpec,
    first: usize,
    x: &Tensor<T>,
) -> (Tensor<T>, Option<Tensor<T>>) {
    if spec.separable {
        let t = depthwise3x3(x, p.tensor(first), spec.stride);
        let y = conv2d(&t, p.tensor(first + 1), p.tensor(first + 2), spec.co, 1, 1);
        (y, Some(t))
    } else {
        (conv2d(x, p.tensor(first), p.tensor(first + 1), spec.co, spec.k, spec.stride), None)
    }
}

impl<T: Real> Tape<T> {
    pub fn run(params: &FusionNetParams<T>, src: Tensor<T>, stack: Tensor<T>) -> Self {
        let nodes = build_graph(&params.config);
        let starts = params.layer_starts();
        let mut values: Vec<Tensor<T>> = Vec::with_capacity(nodes.len());
        let mut aux = Vec::with_capacity(nodes.len());
        let scale = T::of(params.config.residual_scale);
        let mut inputs = [Some(src), Some(stack)];
        for node in &nodes {
            let (v, a) = match *node {
                Node::Source => (inputs[0].take().expect("single source node"), None),
                Node::ReferenceStack => (inputs[1].take().expect("single stack node"), None),
                Node::Conv { layer, input, relu } => {
                    let (mut y, t) = apply_conv(params, &params.specs[layer], starts[layer], &values[input]);
                    if relu {
                        relu_in_place(&mut y);
                    }
                    (y, t)
                }
                Node::Up { input } => (upsample2x(&values[input]), None),
                Node::Add { a, b } => {
                    let mut y = values[a].clone();
                    for (o, &v) in y.data.iter_mut().zip(&values[b].data) {
                        *o += v;
                    }
                    (y, None)
                }
                Node::Residual { prediction } => {
                    let mut y = values[0].clone();
                    for (o, &v) in y.data.iter_mut().zip(&values[prediction].data) {
                        *o += scale * v;
                    }
                    (y, None)
                }
            };
            values.push(v);
            aux.push(a);
        }
        Self { nodes, values, aux }
    }

    /// Root-mean-square value of every graph node, in evaluation order.
    pub fn node_rms(&self) -> Vec<f64> {
        self.values
            .iter()
            .map(|v| (v.data.iter().map(|x| x.f64() * x.f64()).sum::<f64>() / v.data.len().max(1) as f64).sqrt())
            .collect()
    }

    pub fn output(&self) -> &Tensor<T> {
        self.values.last().expect("non-empty graph")
    }

    /// Parameter gradients given the gradient of the loss w.r.t. the output.
    pub fn backward(&self, params: &FusionNetParams<T>, grad_out: Tensor<T>) -> FusionNetParams<T> {
        let starts = params.layer_starts();
        let mut grads = params.zeros_like();
        let mut g: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        *g.last_mut().unwrap() = Some(grad_out);
        let accumulate = |slot: &mut Option<Tensor<T>>, t: Tensor<T>| match slot {
            Some(s) => {
                for (a, b) in s.data.iter_mut().zip(&t.data) {
                    *a += *b;
                }
            }
            None => *slot = Some(t),
        };
        for i in (0..self.nodes.len()).rev() {
            let Some(mut gi) = g[i].take() else {
                continue;
            };
            match self.nodes[i] {
                Node::Source | Node::ReferenceStack => {}
                Node::Add { a, b } => {
                    accumulate(&mut g[b], gi.clone());
                    accumulate(&mut g[a], gi);
                }
                Node::Residual { prediction } => {
                    let scale = T::of(params.config.residual_scale);
                    gi.data.iter_mut().for_each(|v| *v *= scale);
                    accumulate(&mut g[prediction], gi);
                }
                Node::Up { input } => {
                    let x = &self.values[input];
                    accumulate(&mut g[input], upsample2x_backward(&gi, x.h, x.w));
                }
                Node::Conv { layer, input, relu } => {
                    if relu {
                        relu_backward_in_place(&self.values[i], &mut gi);
                    }
                    let spec = &params.specs[layer];
                    let first = starts[layer];
                    let x = &self.values[input];
                    let needs_input = !matches!(self.nodes[input], Node::Source | Node::ReferenceStack);
                    let mut gx = needs_input.then(|| Tensor::zeros(x.c, x.h, x.w));
                    if spec.separable {
                        let t = self.aux[i].as_ref().expect("separable conv keeps its depthwise output");
                        let mut gpw = vec![T::zero(); params.tensor(first + 1).len()];
                        let mut gb = vec![T::zero(); spec.co];
                        let mut gt = Tensor::zeros(t.c, t.h, t.w);
                        conv2d_backward(t, params.tensor(first + 1), &gi, 1, 1, &mut gpw, &mut gb, Some(&mut gt));
                        let mut gdw = vec![T::zero(); params.tensor(first).len()];
                        depthwise3x3_backward(x, params.tensor(first), &gt, spec.stride, &mut gdw, gx.as_mut());
                        add_into(&mut grads, first, &gdw);
                        add_into(&mut grads, first + 1, &gpw);
                        add_into(&mut grads, first + 2, &gb);
                    } else {
                        let mut gw = vec![T::zero(); params.tensor(first).len()];
                        let mut gb = vec![T::zero(); spec.co];
                        conv2d_backward(x, params.tensor(first), &gi, spec.k, spec.stride, &mut gw, &mut gb, gx.as_mut());
                        add_into(&mut grads, first, &gw);
                        add_into(&mut grads, first + 1, &gb);
                    }
                    if let Some(gx) = gx {
                        accumulate(&mut g[input], gx);
                    }
                }
            }
        }
        grads
    }
}

fn add_into<T: Real>(p: &mut FusionNetParams<T>, tensor: usize, v: &[T]) {
    let r = p.tensor_range(tensor);
    for (a, &b) in p.data[r].iter_mut().zip(v) {
        *a += b;
    }
}

/// Runs the network; the output is `source + residual_scale * prediction`
/// and is not clamped.
pub fn forward(params: &FusionNetParams<f32>, inputs: &FusionInputs) -> Result<LinearImage> {
    inputs.validate(&params.config)?;
    let (src, stack) = inputs.tensors::<f32>();
    let tape = Tape::run(params, src, stack);
    let out = tape.output();
    LinearImage::from_planes(out.w, out.h, out.data.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inputs(w: usize, h: usize) -> FusionInputs {
        FusionInputs {
            source: LinearImage::from_fn(w, h, |x, y| [(x as f32 * 0.1).sin().abs(), y as f32 / h as f32, 0.3]),
            reference_warped: LinearImage::from_fn(w / 2, h / 2, |x, _| [0.2, x as f32 * 0.05, 0.7]),
            face_mask: MaskImage::filled(w / 2, h / 2, 1.0),
            occlusion_mask: MaskImage::filled(w / 2, h / 2, 0.0),
        }
    }

    #[test]
    fn zero_params_are_identity() {
        let p = FusionNetParams::zeros(&NetConfig::default()).unwrap();
        let inp = inputs(16, 12);
        assert_eq!(forward(&p, &inp).unwrap(), inp.source);
        let p = FusionNetParams::init(&NetConfig::default(), 4).unwrap();
        assert_eq!(forward(&p, &inp).unwrap(), inp.source);
    }

    #[test]
    fn output_shape_matches_source() {
        let p = FusionNetParams::init(&NetConfig::default(), 1).unwrap();
        let mut p = p;
        p.data.iter_mut().enumerate().for_each(|(i, v)| *v += 0.01 * ((i % 7) as f32 - 3.0));
        for (w, h) in [(8, 8), (20, 12), (32, 64)] {
            let out = forward(&p, &inputs(w, h)).unwrap();
            assert_eq!(out.size(), (w, h));
        }
    }

    #[test]
    fn bad_sizes_rejected() {
        let p = FusionNetParams::zeros(&NetConfig::default()).unwrap();
        assert!(forward(&p, &inputs(18, 12)).is_err());
        let mut inp = inputs(16, 16);
        inp.face_mask = MaskImage::filled(7, 8, 1.0);
        assert!(forward(&p, &inp).is_err());
    }
}
