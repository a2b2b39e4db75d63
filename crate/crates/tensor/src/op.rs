use std::rc::Rc;

use crate::ops::{conv, linalg, loss, reduce, resize, shape};
use crate::tape::GradSink;
use crate::tensor::Tensor;

/// Row-major view of a tensor around one axis: `outer × dim × inner`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct AxisView {
    pub outer: usize,
    pub dim: usize,
    pub inner: usize,
}

impl AxisView {
    pub fn of(shape: &[usize], axis: usize) -> Self {
        Self {
            outer: shape[..axis].iter().product(),
            dim: shape[axis],
            inner: shape[axis + 1..].iter().product(),
        }
    }

    #[inline]
    pub fn at(&self, o: usize, d: usize, i: usize) -> usize {
        (o * self.dim + d) * self.inner + i
    }
}

pub(crate) enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Relu(usize),
    Ln(usize),
    Exp(usize),
    Sum(usize),
    Reshape(usize),
    MaskChannels {
        input: usize,
        mask: Rc<Tensor>,
    },
    SpatialSum(usize),
    SpatialMax {
        input: usize,
        argmax: Vec<usize>,
    },
    BroadcastSpatial {
        input: usize,
        plane: usize,
    },
    Concat {
        inputs: Vec<usize>,
        outer: usize,
        inner: usize,
        sizes: Vec<usize>,
    },
    Slice {
        input: usize,
        view: AxisView,
        start: usize,
        len: usize,
    },
    Softmax {
        input: usize,
        view: AxisView,
    },
    MaxAxis {
        input: usize,
        view: AxisView,
        argmax: Vec<usize>,
    },
    Matmul {
        a: usize,
        b: usize,
        m: usize,
        k: usize,
        n: usize,
        trans_b: bool,
    },
    Cosine {
        feats: usize,
        protos: usize,
    },
    Distance {
        feats: usize,
        protos: usize,
    },
    Conv2d {
        input: usize,
        kernel: usize,
        bias: Option<usize>,
        geom: conv::ConvGeom,
        cols: Vec<f64>,
    },
    MaxPool2 {
        input: usize,
        argmax: Vec<usize>,
    },
    Resize {
        input: usize,
        plan: resize::ResizePlan,
    },
    Dropout {
        input: usize,
        scale: Vec<f64>,
    },
    WeightedBce {
        prob: usize,
        target: Rc<Tensor>,
        weight: Rc<Tensor>,
    },
}

impl Op {
    pub fn inputs(&self) -> Vec<usize> {
        use Op::*;
        match self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) => vec![*a, *b],
            Scale(a, _) | AddScalar(a) | Relu(a) | Ln(a) | Exp(a) | Sum(a) | Reshape(a) | SpatialSum(a) => vec![*a],
            MaskChannels { input, .. }
            | SpatialMax { input, .. }
            | BroadcastSpatial { input, .. }
            | Slice { input, .. }
            | Softmax { input, .. }
            | MaxAxis { input, .. }
            | MaxPool2 { input, .. }
            | Resize { input, .. }
            | Dropout { input, .. } => vec![*input],
            Concat { inputs, .. } => inputs.clone(),
            Matmul { a, b, .. } => vec![*a, *b],
            Cosine { feats, protos } | Distance { feats, protos } => vec![*feats, *protos],
            Conv2d {
                input, kernel, bias, ..
            } => {
                let mut v = vec![*input, *kernel];
                v.extend(bias);
                v
            }
            WeightedBce { prob, .. } => vec![*prob],
        }
    }

    /// Pushes `∂loss/∂input` contributions for every input, given `grad = ∂loss/∂out`.
    pub fn backward(&self, out: &Tensor, grad: &[f64], sink: &mut GradSink<'_>) {
        use Op::*;
        match self {
            Leaf => {}
            Add(a, b) => {
                sink.add(*a, grad);
                sink.add(*b, grad);
            }
            Sub(a, b) => {
                sink.add(*a, grad);
                if sink.wants(*b) {
                    for (s, g) in sink.slot(*b).iter_mut().zip(grad) {
                        *s -= g;
                    }
                }
            }
            Mul(a, b) => {
                for (this, other) in [(*a, *b), (*b, *a)] {
                    if sink.wants(this) {
                        let o = sink.value(other).data();
                        for ((s, g), v) in sink.slot(this).iter_mut().zip(grad).zip(o) {
                            *s += g * v;
                        }
                    }
                }
            }
            Scale(a, c) => {
                if sink.wants(*a) {
                    for (s, g) in sink.slot(*a).iter_mut().zip(grad) {
                        *s += c * g;
                    }
                }
            }
            AddScalar(a) | Reshape(a) => sink.add(*a, grad),
            Relu(a) => {
                if sink.wants(*a) {
                    for ((s, g), y) in sink.slot(*a).iter_mut().zip(grad).zip(out.data()) {
                        if *y > 0.0 {
                            *s += g;
                        }
                    }
                }
            }
            Ln(a) => {
                if sink.wants(*a) {
                    let x = sink.value(*a).data();
                    for ((s, g), x) in sink.slot(*a).iter_mut().zip(grad).zip(x) {
                        *s += g / x;
                    }
                }
            }
            Exp(a) => {
                if sink.wants(*a) {
                    for ((s, g), y) in sink.slot(*a).iter_mut().zip(grad).zip(out.data()) {
                        *s += g * y;
                    }
                }
            }
            Sum(a) => {
                if sink.wants(*a) {
                    let g = grad[0];
                    for s in sink.slot(*a).iter_mut() {
                        *s += g;
                    }
                }
            }
            MaskChannels { input, mask } => reduce::mask_channels_backward(*input, mask, grad, sink),
            SpatialSum(a) => reduce::spatial_sum_backward(*a, grad, sink),
            SpatialMax { input, argmax } => reduce::spatial_max_backward(*input, argmax, grad, sink),
            BroadcastSpatial { input, plane } => shape::broadcast_spatial_backward(*input, *plane, grad, sink),
            Concat {
                inputs,
                outer,
                inner,
                sizes,
            } => shape::concat_backward(inputs, *outer, *inner, sizes, grad, sink),
            Slice {
                input,
                view,
                start,
                len,
            } => shape::slice_backward(*input, *view, *start, *len, grad, sink),
            Softmax { input, view } => reduce::softmax_backward(*input, *view, out, grad, sink),
            MaxAxis { input, view, argmax } => reduce::max_axis_backward(*input, *view, argmax, grad, sink),
            Matmul { a, b, m, k, n, trans_b } => linalg::matmul_backward(*a, *b, *m, *k, *n, *trans_b, grad, sink),
            Cosine { feats, protos } => linalg::cosine_backward(*feats, *protos, out, grad, sink),
            Distance { feats, protos } => linalg::distance_backward(*feats, *protos, out, grad, sink),
            Conv2d {
                input,
                kernel,
                bias,
                geom,
                cols,
            } => conv::conv2d_backward(*input, *kernel, *bias, geom, cols, grad, sink),
            MaxPool2 { input, argmax } => conv::max_pool_backward(*input, argmax, grad, sink),
            Resize { input, plan } => resize::resize_backward(*input, plan, grad, sink),
            Dropout { input, scale } => {
                if sink.wants(*input) {
                    for ((s, g), k) in sink.slot(*input).iter_mut().zip(grad).zip(scale) {
                        *s += g * k;
                    }
                }
            }
            WeightedBce { prob, target, weight } => loss::weighted_bce_backward(*prob, target, weight, grad, sink),
        }
    }
}
