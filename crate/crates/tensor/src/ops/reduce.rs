use std::rc::Rc;

use crate::error::{arg_err, shape_err, Result};
use crate::op::{AxisView, Op};
use crate::tape::{GradSink, Var};
use crate::tensor::Tensor;

fn chw(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [c, h, w] => Ok((*c, h * w)),
        s => shape_err(op, format!("expected [C,H,W], got {s:?}")),
    }
}

impl<'t> Var<'t> {
    /// Multiplies every channel of `[C,H,W]` by a constant `[1,H,W]` mask.
    pub fn mask_channels(self, mask: &Tensor) -> Result<Var<'t>> {
        let x = self.value();
        let (_, plane) = chw("mask_channels", &x)?;
        if mask.shape() != [1, x.shape()[1], x.shape()[2]] {
            return shape_err(
                "mask_channels",
                format!("mask {:?} for features {:?}", mask.shape(), x.shape()),
            );
        }
        let m = mask.data();
        let data = x
            .data()
            .chunks(plane)
            .flat_map(|ch| ch.iter().zip(m).map(|(v, k)| v * k))
            .collect();
        let out = Tensor::new(x.shape(), data)?;
        self.tape.record(
            "mask_channels",
            out,
            Op::MaskChannels {
                input: self.id,
                mask: Rc::new(mask.clone()),
            },
        )
    }

    /// `[C,H,W] -> [C]` sum over the spatial plane.
    pub fn spatial_sum(self) -> Result<Var<'t>> {
        let x = self.value();
        let (c, plane) = chw("spatial_sum", &x)?;
        let data = x.data().chunks(plane).map(|ch| ch.iter().sum()).collect();
        self.tape
            .record("spatial_sum", Tensor::new(&[c], data)?, Op::SpatialSum(self.id))
    }

    /// `[C,H,W] -> [C]` mean over the spatial plane.
    pub fn spatial_mean(self) -> Result<Var<'t>> {
        let plane = chw("spatial_mean", &self.value())?.1;
        self.spatial_sum()?.scale(1.0 / plane as f64)
    }

    /// `[C,H,W] -> [C]` max over the spatial plane; ties resolve to the first pixel.
    pub fn spatial_max(self) -> Result<Var<'t>> {
        let x = self.value();
        let (c, plane) = chw("spatial_max", &x)?;
        let mut data = Vec::with_capacity(c);
        let mut argmax = Vec::with_capacity(c);
        for (ci, ch) in x.data().chunks(plane).enumerate() {
            let (best, val) = first_max(ch);
            data.push(val);
            argmax.push(ci * plane + best);
        }
        self.tape.record(
            "spatial_max",
            Tensor::new(&[c], data)?,
            Op::SpatialMax { input: self.id, argmax },
        )
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(self, axis: usize) -> Result<Var<'t>> {
        let x = self.value();
        if axis >= x.rank() {
            return arg_err("softmax", format!("axis {axis} for shape {:?}", x.shape()));
        }
        let view = AxisView::of(x.shape(), axis);
        let src = x.data();
        let mut out = vec![0.0; src.len()];
        for o in 0..view.outer {
            for i in 0..view.inner {
                let mut mx = f64::NEG_INFINITY;
                for d in 0..view.dim {
                    mx = mx.max(src[view.at(o, d, i)]);
                }
                let mut total = 0.0;
                for d in 0..view.dim {
                    let e = (src[view.at(o, d, i)] - mx).exp();
                    out[view.at(o, d, i)] = e;
                    total += e;
                }
                for d in 0..view.dim {
                    out[view.at(o, d, i)] /= total;
                }
            }
        }
        let out = Tensor::new(x.shape(), out)?;
        self.tape.record("softmax", out, Op::Softmax { input: self.id, view })
    }

    /// Max along `axis`, keeping it as a size-1 dimension. Also returns the
    /// winning index for every output position; ties go to the lowest index.
    pub fn max_axis(self, axis: usize) -> Result<(Var<'t>, Vec<usize>)> {
        let x = self.value();
        if axis >= x.rank() {
            return arg_err("max_axis", format!("axis {axis} for shape {:?}", x.shape()));
        }
        let view = AxisView::of(x.shape(), axis);
        let src = x.data();
        let mut data = Vec::with_capacity(view.outer * view.inner);
        let mut winners = Vec::with_capacity(view.outer * view.inner);
        let mut argmax = Vec::with_capacity(view.outer * view.inner);
        for o in 0..view.outer {
            for i in 0..view.inner {
                let mut best = 0;
                for d in 1..view.dim {
                    if src[view.at(o, d, i)] > src[view.at(o, best, i)] {
                        best = d;
                    }
                }
                data.push(src[view.at(o, best, i)]);
                winners.push(best);
                argmax.push(view.at(o, best, i));
            }
        }
        let mut shape = x.shape().to_vec();
        shape[axis] = 1;
        let var = self.tape.record(
            "max_axis",
            Tensor::new(&shape, data)?,
            Op::MaxAxis {
                input: self.id,
                view,
                argmax,
            },
        )?;
        Ok((var, winners))
    }
}

fn first_max(xs: &[f64]) -> (usize, f64) {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate().skip(1) {
        if v > xs[best] {
            best = i;
        }
    }
    (best, xs[best])
}

pub(crate) fn mask_channels_backward(input: usize, mask: &Tensor, grad: &[f64], sink: &mut GradSink<'_>) {
    if !sink.wants(input) {
        return;
    }
    let m = mask.data();
    let plane = m.len();
    for (s_ch, g_ch) in sink.slot(input).chunks_mut(plane).zip(grad.chunks(plane)) {
        for ((s, g), k) in s_ch.iter_mut().zip(g_ch).zip(m) {
            *s += g * k;
        }
    }
}

pub(crate) fn spatial_sum_backward(input: usize, grad: &[f64], sink: &mut GradSink<'_>) {
    if !sink.wants(input) {
        return;
    }
    let plane = sink.value(input).numel() / grad.len();
    for (s_ch, g) in sink.slot(input).chunks_mut(plane).zip(grad) {
        for s in s_ch {
            *s += g;
        }
    }
}

pub(crate) fn spatial_max_backward(input: usize, argmax: &[usize], grad: &[f64], sink: &mut GradSink<'_>) {
    if !sink.wants(input) {
        return;
    }
    let slot = sink.slot(input);
    for (&idx, g) in argmax.iter().zip(grad) {
        slot[idx] += g;
    }
}

pub(crate) fn softmax_backward(input: usize, view: AxisView, out: &Tensor, grad: &[f64], sink: &mut GradSink<'_>) {
    if !sink.wants(input) {
        return;
    }
    let y = out.data();
    let slot = sink.slot(input);
    for o in 0..view.outer {
        for i in 0..view.inner {
            let mut dot = 0.0;
            for d in 0..view.dim {
                let k = view.at(o, d, i);
                dot += grad[k] * y[k];
            }
            for d in 0..view.dim {
                let k = view.at(o, d, i);
                slot[k] += y[k] * (grad[k] - dot);
            }
        }
    }
}

pub(crate) fn max_axis_backward(
    input: usize,
    _view: AxisView,
    argmax: &[usize],
    grad: &[f64],
    sink: &mut GradSink<'_>,
) {
    if !sink.wants(input) {
        return;
    }
    let slot = sink.slot(input);
    for (&idx, g) in argmax.iter().zip(grad) {
        slot[idx] += g;
    }
}
