use crate::error::{arg_err, shape_err, Result};
use crate::op::{AxisView, Op};
use crate::tape::{GradSink, Var};
use crate::tensor::Tensor;

impl<'t> Var<'t> {
    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        let out = (*self.value()).clone().reshape(shape)?;
        self.tape.record("reshape", out, Op::Reshape(self.id))
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(self) -> Result<Var<'t>> {
        let out = Tensor::scalar(self.value().sum());
        self.tape.record("sum", out, Op::Sum(self.id))
    }

    pub fn mean(self) -> Result<Var<'t>> {
        let n = self.value().numel() as f64;
        self.sum()?.scale(1.0 / n)
    }

    /// Contiguous range `[start, start+len)` along `axis`.
    pub fn slice(self, axis: usize, start: usize, len: usize) -> Result<Var<'t>> {
        let x = self.value();
        if axis >= x.rank() || len == 0 || start + len > x.shape()[axis] {
            return arg_err(
                "slice",
                format!("[{start}, {}) on axis {axis} of {:?}", start + len, x.shape()),
            );
        }
        let view = AxisView::of(x.shape(), axis);
        let mut data = Vec::with_capacity(view.outer * len * view.inner);
        for o in 0..view.outer {
            let from = view.at(o, start, 0);
            data.extend_from_slice(&x.data()[from..from + len * view.inner]);
        }
        let mut shape = x.shape().to_vec();
        shape[axis] = len;
        let out = Tensor::new(&shape, data)?;
        self.tape.record(
            "slice",
            out,
            Op::Slice {
                input: self.id,
                view,
                start,
                len,
            },
        )
    }

    /// Repeats a `[C]` vector over an `h×w` plane, giving `[C, h, w]`.
    pub fn broadcast_spatial(self, h: usize, w: usize) -> Result<Var<'t>> {
        let x = self.value();
        if x.rank() != 1 {
            return shape_err("broadcast_spatial", format!("expected [C], got {:?}", x.shape()));
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(x.numel() * plane);
        for &v in x.data() {
            data.extend(std::iter::repeat_n(v, plane));
        }
        let out = Tensor::new(&[x.numel(), h, w], data)?;
        self.tape
            .record("broadcast_spatial", out, Op::BroadcastSpatial { input: self.id, plane })
    }
}

/// Concatenates along `axis`; all other dimensions must agree.
pub fn concat<'t>(parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
    let Some(first) = parts.first() else {
        return arg_err("concat", "no inputs");
    };
    let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
    let base = values[0].shape().to_vec();
    if axis >= base.len() {
        return arg_err("concat", format!("axis {axis} for rank {}", base.len()));
    }
    let mut sizes = Vec::with_capacity(parts.len());
    for (p, v) in parts.iter().zip(&values) {
        first.same_tape(p)?;
        let s = v.shape();
        let compatible =
            s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
        if !compatible {
            return shape_err("concat", format!("{s:?} vs {base:?} along axis {axis}"));
        }
        sizes.push(s[axis]);
    }
    let view = AxisView::of(&base, axis);
    let total: usize = sizes.iter().sum();
    let mut data = Vec::with_capacity(view.outer * total * view.inner);
    for o in 0..view.outer {
        for (v, &sz) in values.iter().zip(&sizes) {
            let chunk = sz * view.inner;
            data.extend_from_slice(&v.data()[o * chunk..(o + 1) * chunk]);
        }
    }
    let mut shape = base;
    shape[axis] = total;
    let out = Tensor::new(&shape, data)?;
    first.tape.record(
        "concat",
        out,
        Op::Concat {
            inputs: parts.iter().map(|p| p.id).collect(),
            outer: view.outer,
            inner: view.inner,
            sizes,
        },
    )
}

pub(crate) fn concat_backward(
    inputs: &[usize],
    outer: usize,
    inner: usize,
    sizes: &[usize],
    grad: &[f64],
    sink: &mut GradSink<'_>,
) {
    let total: usize = sizes.iter().sum();
    let mut offset = 0;
    for (&id, &sz) in inputs.iter().zip(sizes) {
        if sink.wants(id) {
            let chunk = sz * inner;
            let slot = sink.slot(id);
            for o in 0..outer {
                let src = o * total * inner + offset * inner;
                for (s, g) in slot[o * chunk..(o + 1) * chunk].iter_mut().zip(&grad[src..src + chunk]) {
                    *s += g;
                }
            }
        }
        offset += sz;
    }
}

pub(crate) fn slice_backward(
    input: usize,
    view: AxisView,
    start: usize,
    len: usize,
    grad: &[f64],
    sink: &mut GradSink<'_>,
) {
    if !sink.wants(input) {
        return;
    }
    let slot = sink.slot(input);
    let chunk = len * view.inner;
    for o in 0..view.outer {
        let dst = view.at(o, start, 0);
        for (s, g) in slot[dst..dst + chunk].iter_mut().zip(&grad[o * chunk..]) {
            *s += g;
        }
    }
}

pub(crate) fn broadcast_spatial_backward(input: usize, plane: usize, grad: &[f64], sink: &mut GradSink<'_>) {
    if !sink.wants(input) {
        return;
    }
    for (s, g) in sink.slot(input).iter_mut().zip(grad.chunks(plane)) {
        *s += g.iter().sum::<f64>();
    }
}
