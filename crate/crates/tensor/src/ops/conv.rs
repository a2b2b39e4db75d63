//! 2-D convolution on single `[C,H,W]` images via im2col + GEMM.

use crate::error::{arg_err, shape_err, Result};
use crate::gemm::gemm;
use crate::op::Op;
use crate::tape::{GradSink, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub pad: usize,
    pub dilation: usize,
}

impl ConvSpec {
    /// Stride 1, "same" padding for an odd kernel of size `k` at dilation `dilation`.
    pub fn same(k: usize, dilation: usize) -> Self {
        Self {
            stride: 1,
            pad: dilation * (k - 1) / 2,
            dilation,
        }
    }
}

impl Default for ConvSpec {
    fn default() -> Self {
        Self {
            stride: 1,
            pad: 0,
            dilation: 1,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    k: usize,
    spec: ConvSpec,
    h_out: usize,
    w_out: usize,
}

impl ConvGeom {
    fn rows(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn positions(&self) -> usize {
        self.h_out * self.w_out
    }

    /// Input coordinate hit by output `o` with kernel tap `t`, if inside the image.
    #[inline]
    fn source(&self, o: usize, t: usize, extent: usize) -> Option<usize> {
        let p = (o * self.spec.stride + t * self.spec.dilation) as isize - self.spec.pad as isize;
        (p >= 0 && (p as usize) < extent).then_some(p as usize)
    }
}

/// Output spatial size of a convolution, or `None` if the window does not fit.
pub fn conv_output_size(extent: usize, k: usize, spec: ConvSpec) -> Option<usize> {
    let span = spec.dilation * (k - 1) + 1;
    let padded = extent + 2 * spec.pad;
    (padded >= span).then(|| (padded - span) / spec.stride + 1)
}

/// Output columns `[lo, hi)` whose source column `ox*stride + kx*dilation - pad` lies inside `[0, w)`.
fn valid_range(g: &ConvGeom, kx: usize) -> (usize, usize) {
    let first = (0..g.w_out).find(|&ox| g.source(ox, kx, g.w).is_some());
    match first {
        None => (0, 0),
        Some(lo) => {
            let hi = (lo..g.w_out)
                .find(|&ox| g.source(ox, kx, g.w).is_none())
                .unwrap_or(g.w_out);
            (lo, hi)
        }
    }
}

fn im2col(x: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (rows, npos) = (g.rows(), g.positions());
    let mut cols = vec![0.0; rows * npos];
    let stride = g.spec.stride;
    for c in 0..g.c_in {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let r = (c * g.k + ky) * g.k + kx;
                let dst = &mut cols[r * npos..(r + 1) * npos];
                let (lo, hi) = valid_range(g, kx);
                if lo >= hi {
                    continue;
                }
                let ix0 = g.source(lo, kx, g.w).expect("valid column");
                for oy in 0..g.h_out {
                    let Some(iy) = g.source(oy, ky, g.h) else {
                        continue;
                    };
                    let row = &plane[iy * g.w..(iy + 1) * g.w];
                    let out = &mut dst[oy * g.w_out + lo..oy * g.w_out + hi];
                    if stride == 1 {
                        out.copy_from_slice(&row[ix0..ix0 + (hi - lo)]);
                    } else {
                        for (j, o) in out.iter_mut().enumerate() {
                            *o = row[ix0 + j * stride];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im_add(cols: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let npos = g.positions();
    let stride = g.spec.stride;
    for c in 0..g.c_in {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let r = (c * g.k + ky) * g.k + kx;
                let src = &cols[r * npos..(r + 1) * npos];
                let (lo, hi) = valid_range(g, kx);
                if lo >= hi {
                    continue;
                }
                let ix0 = g.source(lo, kx, g.w).expect("valid column");
                for oy in 0..g.h_out {
                    let Some(iy) = g.source(oy, ky, g.h) else {
                        continue;
                    };
                    let row = &mut plane[iy * g.w..(iy + 1) * g.w];
                    let grad = &src[oy * g.w_out + lo..oy * g.w_out + hi];
                    for (j, v) in grad.iter().enumerate() {
                        row[ix0 + j * stride] += v;
                    }
                }
            }
        }
    }
}

impl<'t> Var<'t> {
    /// Convolves a `[C_in,H,W]` input with a `[C_out,C_in,k,k]` kernel (odd `k`),
    /// plus an optional `[C_out]` bias.
    pub fn conv2d(self, kernel: Var<'t>, bias: Option<Var<'t>>, spec: ConvSpec) -> Result<Var<'t>> {
        self.same_tape(&kernel)?;
        if let Some(b) = &bias {
            self.same_tape(b)?;
        }
        if spec.stride == 0 || spec.dilation == 0 {
            return arg_err("conv2d", format!("{spec:?}"));
        }
        let (x, kv) = (self.value(), kernel.value());
        let (c_in, h, w) = match x.shape() {
            [c, h, w] => (*c, *h, *w),
            s => return shape_err("conv2d", format!("input must be [C,H,W], got {s:?}")),
        };
        let (c_out, k) = match kv.shape() {
            [o, ci, k1, k2] if *ci == c_in && k1 == k2 && k1 % 2 == 1 => (*o, *k1),
            s => {
                return shape_err(
                    "conv2d",
                    format!("kernel {s:?} incompatible with input channels {c_in} (odd square kernel required)"),
                )
            }
        };
        if let Some(b) = &bias {
            if b.value().shape() != [c_out] {
                return shape_err("conv2d", format!("bias {:?} for {c_out} outputs", b.shape()));
            }
        }
        let (Some(h_out), Some(w_out)) = (conv_output_size(h, k, spec), conv_output_size(w, k, spec)) else {
            return shape_err(
                "conv2d",
                format!("kernel {k} (dilation {}) exceeds padded input {h}x{w}", spec.dilation),
            );
        };
        let geom = ConvGeom {
            c_in,
            h,
            w,
            c_out,
            k,
            spec,
            h_out,
            w_out,
        };
        let cols = im2col(x.data(), &geom);
        let npos = geom.positions();
        let mut out = vec![0.0; c_out * npos];
        gemm(
            c_out,
            geom.rows(),
            npos,
            kv.data(),
            false,
            &cols,
            false,
            &mut out,
            false,
        );
        if let Some(b) = &bias {
            for (row, bv) in out.chunks_mut(npos).zip(b.value().data()) {
                row.iter_mut().for_each(|v| *v += bv);
            }
        }
        let out = Tensor::new(&[c_out, h_out, w_out], out)?;
        self.tape.record(
            "conv2d",
            out,
            Op::Conv2d {
                input: self.id,
                kernel: kernel.id,
                bias: bias.map(|b| b.id),
                geom,
                cols,
            },
        )
    }

    /// 2×2 max-pool with stride 2 on `[C,H,W]`; H and W must be even.
    pub fn max_pool2(self) -> Result<Var<'t>> {
        let x = self.value();
        let (c, h, w) = match x.shape() {
            [c, h, w] if h % 2 == 0 && w % 2 == 0 => (*c, *h, *w),
            s => return shape_err("max_pool2", format!("need [C,H,W] with even H,W, got {s:?}")),
        };
        let (ho, wo) = (h / 2, w / 2);
        let src = x.data();
        let mut data = Vec::with_capacity(c * ho * wo);
        let mut argmax = Vec::with_capacity(c * ho * wo);
        for ci in 0..c {
            let base = ci * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let candidates = [
                        base + 2 * oy * w + 2 * ox,
                        base + 2 * oy * w + 2 * ox + 1,
                        base + (2 * oy + 1) * w + 2 * ox,
                        base + (2 * oy + 1) * w + 2 * ox + 1,
                    ];
                    let mut best = candidates[0];
                    for &i in &candidates[1..] {
                        if src[i] > src[best] {
                            best = i;
                        }
                    }
                    data.push(src[best]);
                    argmax.push(best);
                }
            }
        }
        self.tape.record(
            "max_pool2",
            Tensor::new(&[c, ho, wo], data)?,
            Op::MaxPool2 { input: self.id, argmax },
        )
    }
}

pub(crate) fn conv2d_backward(
    input: usize,
    kernel: usize,
    bias: Option<usize>,
    g: &ConvGeom,
    cols: &[f64],
    grad: &[f64],
    sink: &mut GradSink<'_>,
) {
    let npos = g.positions();
    if let Some(b) = bias {
        if sink.wants(b) {
            for (s, row) in sink.slot(b).iter_mut().zip(grad.chunks(npos)) {
                *s += row.iter().sum::<f64>();
            }
        }
    }
    if sink.wants(kernel) {
        // dK[o, r] = Σ_pos G[o, pos] · cols[r, pos]
        gemm(
            g.c_out,
            npos,
            g.rows(),
            grad,
            false,
            cols,
            true,
            sink.slot(kernel),
            true,
        );
    }
    if sink.wants(input) {
        let kv = sink.value(kernel).data();
        // dcols[r, pos] = Σ_o K[o, r] · G[o, pos]
        let mut dcols = vec![0.0; g.rows() * npos];
        gemm(g.rows(), g.c_out, npos, kv, true, grad, false, &mut dcols, false);
        col2im_add(&dcols, g, sink.slot(input));
    }
}

pub(crate) fn max_pool_backward(input: usize, argmax: &[usize], grad: &[f64], sink: &mut GradSink<'_>) {
    if !sink.wants(input) {
        return;
    }
    let slot = sink.slot(input);
    for (&i, g) in argmax.iter().zip(grad) {
        slot[i] += g;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tape;

    /// Direct nested-loop convolution used as an independent reference.
    fn direct_conv(x: &Tensor, k: &Tensor, spec: ConvSpec) -> Tensor {
        let (ci, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (co, ks) = (k.shape()[0], k.shape()[2]);
        let ho = conv_output_size(h, ks, spec).unwrap();
        let wo = conv_output_size(w, ks, spec).unwrap();
        let mut out = Tensor::zeros(&[co, ho, wo]);
        for o in 0..co {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = 0.0;
                    for c in 0..ci {
                        for ky in 0..ks {
                            for kx in 0..ks {
                                let iy = (oy * spec.stride + ky * spec.dilation) as isize - spec.pad as isize;
                                let ix = (ox * spec.stride + kx * spec.dilation) as isize - spec.pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                    acc += x.get(&[c, iy as usize, ix as usize]) * k.get(&[o, c, ky, kx]);
                                }
                            }
                        }
                    }
                    out.set(&[o, oy, ox], acc);
                }
            }
        }
        out
    }

    #[test]
    fn identity_kernel_is_bit_exact() {
        let tape = Tape::new();
        let x = Tensor::from_fn(&[1, 5, 7], |i| (i as f64 * 0.37).sin() * 1e3);
        let xv = tape.constant(x.clone());
        let k = tape.constant(Tensor::ones(&[1, 1, 1, 1]));
        let y = xv.conv2d(k, None, ConvSpec::default()).unwrap();
        assert_eq!(*y.value(), x);
    }

    #[test]
    fn all_ones_kernel_on_constant_input() {
        let v = 2.5;
        let tape = Tape::new();
        let x = tape.constant(Tensor::full(&[1, 6, 6], v));
        let k = tape.constant(Tensor::ones(&[1, 1, 3, 3]));
        let y = x.conv2d(k, None, ConvSpec::same(3, 1)).unwrap().value();
        for yy in 1..5 {
            for xx in 1..5 {
                assert_eq!(y.get(&[0, yy, xx]), 9.0 * v);
            }
        }
        // corners only see four taps
        assert_eq!(y.get(&[0, 0, 0]), 4.0 * v);
    }

    #[test]
    fn output_shape_rule() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[4, 16, 16]));
        let k = tape.constant(Tensor::zeros(&[8, 4, 3, 3]));
        let y = x
            .conv2d(
                k,
                None,
                ConvSpec {
                    stride: 1,
                    pad: 1,
                    dilation: 1,
                },
            )
            .unwrap();
        assert_eq!(y.shape(), vec![8, 16, 16]);
        let y = x
            .conv2d(
                k,
                None,
                ConvSpec {
                    stride: 2,
                    pad: 1,
                    dilation: 2,
                },
            )
            .unwrap();
        // (16 + 2 - 2*2 - 1)/2 + 1 = 7
        assert_eq!(y.shape(), vec![8, 7, 7]);
    }

    #[test]
    fn channel_mismatch_is_dimension_error() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[3, 8, 8]));
        let k = tape.constant(Tensor::zeros(&[2, 4, 3, 3]));
        assert!(matches!(
            x.conv2d(k, None, ConvSpec::same(3, 1)),
            Err(crate::TensorError::Shape { .. })
        ));
    }

    #[test]
    fn matches_direct_summation() {
        let x = Tensor::from_fn(&[3, 9, 8], |i| ((i * 31 % 17) as f64 - 8.0) / 7.0);
        let k = Tensor::from_fn(&[4, 3, 3, 3], |i| ((i * 13 % 11) as f64 - 5.0) / 9.0);
        for spec in [
            ConvSpec::same(3, 1),
            ConvSpec::same(3, 2),
            ConvSpec {
                stride: 2,
                pad: 1,
                dilation: 1,
            },
            ConvSpec {
                stride: 3,
                pad: 0,
                dilation: 2,
            },
        ] {
            let tape = Tape::new();
            let y = tape
                .constant(x.clone())
                .conv2d(tape.constant(k.clone()), None, spec)
                .unwrap();
            let reference = direct_conv(&x, &k, spec);
            assert!(y.value().max_abs_diff(&reference) < 1e-12, "{spec:?}");
        }
    }

    #[test]
    fn max_pool_picks_window_max() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::new(&[1, 2, 4], vec![1.0, 3.0, -1.0, -2.0, 2.0, 0.0, -3.0, -4.0]).unwrap());
        assert_eq!(x.max_pool2().unwrap().value().data(), &[3.0, -1.0]);
    }
}
