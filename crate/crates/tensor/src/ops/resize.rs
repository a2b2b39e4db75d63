//! Bilinear resampling with half-pixel centres (no corner alignment).

use crate::error::shape_err;
use crate::error::Result;
use crate::op::Op;
use crate::tape::{GradSink, Var};
use crate::tensor::Tensor;

/// Per-axis interpolation taps: output index -> (lo, hi, weight of hi).
#[derive(Clone, Debug)]
pub(crate) struct AxisTaps {
    taps: Vec<(usize, usize, f64)>,
}

impl AxisTaps {
    fn new(src: usize, dst: usize) -> Self {
        let scale = src as f64 / dst as f64;
        let taps = (0..dst)
            .map(|o| {
                let pos = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
                let lo = (pos.floor() as usize).min(src - 1);
                let hi = (lo + 1).min(src - 1);
                (lo, hi, pos - lo as f64)
            })
            .collect();
        Self { taps }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct ResizePlan {
    channels: usize,
    src: (usize, usize),
    dst: (usize, usize),
    rows: AxisTaps,
    cols: AxisTaps,
}

impl ResizePlan {
    fn new(channels: usize, src: (usize, usize), dst: (usize, usize)) -> Self {
        Self {
            channels,
            src,
            dst,
            rows: AxisTaps::new(src.0, dst.0),
            cols: AxisTaps::new(src.1, dst.1),
        }
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        let (sh, sw) = self.src;
        let (dh, dw) = self.dst;
        let mut out = Vec::with_capacity(self.channels * dh * dw);
        for c in 0..self.channels {
            let plane = &x[c * sh * sw..(c + 1) * sh * sw];
            for &(y0, y1, fy) in &self.rows.taps {
                for &(x0, x1, fx) in &self.cols.taps {
                    let top = plane[y0 * sw + x0] * (1.0 - fx) + plane[y0 * sw + x1] * fx;
                    let bot = plane[y1 * sw + x0] * (1.0 - fx) + plane[y1 * sw + x1] * fx;
                    out.push(top * (1.0 - fy) + bot * fy);
                }
            }
        }
        out
    }

    fn backward(&self, grad: &[f64], dx: &mut [f64]) {
        let (sh, sw) = self.src;
        let (dh, dw) = self.dst;
        for c in 0..self.channels {
            let plane = &mut dx[c * sh * sw..(c + 1) * sh * sw];
            let g = &grad[c * dh * dw..(c + 1) * dh * dw];
            for (oy, &(y0, y1, fy)) in self.rows.taps.iter().enumerate() {
                for (ox, &(x0, x1, fx)) in self.cols.taps.iter().enumerate() {
                    let v = g[oy * dw + ox];
                    plane[y0 * sw + x0] += v * (1.0 - fy) * (1.0 - fx);
                    plane[y0 * sw + x1] += v * (1.0 - fy) * fx;
                    plane[y1 * sw + x0] += v * fy * (1.0 - fx);
                    plane[y1 * sw + x1] += v * fy * fx;
                }
            }
        }
    }
}

/// Bilinear resize of a constant `[C,H,W]` tensor.
pub fn resize_bilinear(x: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let [c, sh, sw] = *x.shape() else {
        return shape_err("resize_bilinear", format!("expected [C,H,W], got {:?}", x.shape()));
    };
    if (sh, sw) == (h, w) {
        return Ok(x.clone());
    }
    let plan = ResizePlan::new(c, (sh, sw), (h, w));
    Tensor::new(&[c, h, w], plan.forward(x.data()))
}

impl<'t> Var<'t> {
    /// Differentiable bilinear resize of `[C,H,W]` to `[C,h,w]`.
    pub fn resize_bilinear(self, h: usize, w: usize) -> Result<Var<'t>> {
        let x = self.value();
        let [c, sh, sw] = *x.shape() else {
            return shape_err("resize_bilinear", format!("expected [C,H,W], got {:?}", x.shape()));
        };
        if h == 0 || w == 0 {
            return shape_err("resize_bilinear", "zero-sized target");
        }
        let plan = ResizePlan::new(c, (sh, sw), (h, w));
        let out = Tensor::new(&[c, h, w], plan.forward(x.data()))?;
        self.tape
            .record("resize_bilinear", out, Op::Resize { input: self.id, plan })
    }
}

pub(crate) fn resize_backward(input: usize, plan: &ResizePlan, grad: &[f64], sink: &mut GradSink<'_>) {
    if sink.wants(input) {
        plan.backward(grad, sink.slot(input));
    }
}
