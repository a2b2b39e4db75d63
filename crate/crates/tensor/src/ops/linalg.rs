use crate::error::{shape_err, Result};
use crate::gemm::gemm;
use crate::op::Op;
use crate::tape::{GradSink, Var};
use crate::tensor::Tensor;

/// `(d, n, m)` for column features `[d, N]` against row prototypes `[M, d]`.
fn feature_proto_dims(op: &'static str, feats: &Tensor, protos: &Tensor) -> Result<(usize, usize, usize)> {
    match (feats.shape(), protos.shape()) {
        ([d, n], [m, dp]) if d == dp => Ok((*d, *n, *m)),
        (f, p) => shape_err(op, format!("features {f:?} vs prototypes {p:?}")),
    }
}

impl<'t> Var<'t> {
    /// `[m,k] · [k,n]`.
    pub fn matmul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.matmul_impl(rhs, false)
    }

    /// `[m,k] · [n,k]ᵀ`.
    pub fn matmul_nt(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.matmul_impl(rhs, true)
    }

    fn matmul_impl(self, rhs: Var<'t>, trans_b: bool) -> Result<Var<'t>> {
        self.same_tape(&rhs)?;
        let (a, b) = (self.value(), rhs.value());
        let (m, k, n) = match (a.shape(), b.shape(), trans_b) {
            ([m, k], [k2, n], false) if k == k2 => (*m, *k, *n),
            ([m, k], [n, k2], true) if k == k2 => (*m, *k, *n),
            (sa, sb, _) => return shape_err("matmul", format!("{sa:?} x {sb:?} (trans_b={trans_b})")),
        };
        let mut c = vec![0.0; m * n];
        gemm(m, k, n, a.data(), false, b.data(), trans_b, &mut c, false);
        self.tape.record(
            "matmul",
            Tensor::new(&[m, n], c)?,
            Op::Matmul {
                a: self.id,
                b: rhs.id,
                m,
                k,
                n,
                trans_b,
            },
        )
    }

    /// Cosine similarity of every feature column `[d, N]` with every prototype
    /// row `[M, d]`, giving `[M, N]`. A zero-norm operand yields similarity 0.
    pub fn cosine_map(self, protos: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&protos)?;
        let (f, p) = (self.value(), protos.value());
        let (d, n, m) = feature_proto_dims("cosine_map", &f, &p)?;
        let fnorm = column_norms(f.data(), d, n);
        let pnorm = row_norms(p.data(), d, m);
        let mut dots = vec![0.0; m * n];
        gemm(m, d, n, p.data(), false, f.data(), false, &mut dots, false);
        for mi in 0..m {
            for ni in 0..n {
                let denom = pnorm[mi] * fnorm[ni];
                let v = &mut dots[mi * n + ni];
                *v = if denom > 0.0 { *v / denom } else { 0.0 };
            }
        }
        self.tape.record(
            "cosine_map",
            Tensor::new(&[m, n], dots)?,
            Op::Cosine {
                feats: self.id,
                protos: protos.id,
            },
        )
    }

    /// Euclidean distance of every feature column `[d, N]` to every prototype
    /// row `[M, d]`, giving `[M, N]`.
    pub fn distance_map(self, protos: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&protos)?;
        let (f, p) = (self.value(), protos.value());
        let (d, n, m) = feature_proto_dims("distance_map", &f, &p)?;
        let (fd, pd) = (f.data(), p.data());
        let mut out = vec![0.0; m * n];
        for mi in 0..m {
            for ni in 0..n {
                let mut acc = 0.0;
                for di in 0..d {
                    let diff = fd[di * n + ni] - pd[mi * d + di];
                    acc += diff * diff;
                }
                out[mi * n + ni] = acc.sqrt();
            }
        }
        self.tape.record(
            "distance_map",
            Tensor::new(&[m, n], out)?,
            Op::Distance {
                feats: self.id,
                protos: protos.id,
            },
        )
    }
}

fn column_norms(x: &[f64], d: usize, n: usize) -> Vec<f64> {
    let mut acc = vec![0.0; n];
    for row in x.chunks(n).take(d) {
        for (a, v) in acc.iter_mut().zip(row) {
            *a += v * v;
        }
    }
    acc.into_iter().map(f64::sqrt).collect()
}

fn row_norms(x: &[f64], d: usize, m: usize) -> Vec<f64> {
    x.chunks(d)
        .take(m)
        .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect()
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn matmul_backward(
    a: usize,
    b: usize,
    m: usize,
    k: usize,
    n: usize,
    trans_b: bool,
    grad: &[f64],
    sink: &mut GradSink<'_>,
) {
    if sink.wants(a) {
        let bv = sink.value(b).data();
        // dA[m,k] = G[m,n] · B[k,n]ᵀ  (or G · B when B is stored [n,k])
        gemm(m, n, k, grad, false, bv, !trans_b, sink.slot(a), true);
    }
    if sink.wants(b) {
        let av = sink.value(a).data();
        if trans_b {
            // dB[n,k] = Gᵀ[n,m] · A[m,k]
            gemm(n, m, k, grad, true, av, false, sink.slot(b), true);
        } else {
            // dB[k,n] = Aᵀ[k,m] · G[m,n]
            gemm(k, m, n, av, true, grad, false, sink.slot(b), true);
        }
    }
}

pub(crate) fn cosine_backward(feats: usize, protos: usize, out: &Tensor, grad: &[f64], sink: &mut GradSink<'_>) {
    let (f, p) = (sink.value(feats), sink.value(protos));
    let (d, n) = (f.shape()[0], f.shape()[1]);
    let m = p.shape()[0];
    let (fd, pd, c) = (f.data(), p.data(), out.data());
    let fnorm = column_norms(fd, d, n);
    let pnorm = row_norms(pd, d, m);

    // For c = <p,f>/(|p||f|):  dc/df = p/(|p||f|) - c f/|f|²,  dc/dp = f/(|p||f|) - c p/|p|².
    if sink.wants(feats) {
        let slot = sink.slot(feats);
        for mi in 0..m {
            for ni in 0..n {
                let denom = pnorm[mi] * fnorm[ni];
                if denom == 0.0 {
                    continue;
                }
                let g = grad[mi * n + ni];
                if g == 0.0 {
                    continue;
                }
                let cv = c[mi * n + ni];
                let inv_f2 = 1.0 / (fnorm[ni] * fnorm[ni]);
                for di in 0..d {
                    slot[di * n + ni] += g * (pd[mi * d + di] / denom - cv * fd[di * n + ni] * inv_f2);
                }
            }
        }
    }
    if sink.wants(protos) {
        let slot = sink.slot(protos);
        for mi in 0..m {
            let inv_p2 = if pnorm[mi] > 0.0 {
                1.0 / (pnorm[mi] * pnorm[mi])
            } else {
                0.0
            };
            for ni in 0..n {
                let denom = pnorm[mi] * fnorm[ni];
                if denom == 0.0 {
                    continue;
                }
                let g = grad[mi * n + ni];
                if g == 0.0 {
                    continue;
                }
                let cv = c[mi * n + ni];
                for di in 0..d {
                    slot[mi * d + di] += g * (fd[di * n + ni] / denom - cv * pd[mi * d + di] * inv_p2);
                }
            }
        }
    }
}

pub(crate) fn distance_backward(feats: usize, protos: usize, out: &Tensor, grad: &[f64], sink: &mut GradSink<'_>) {
    let (f, p) = (sink.value(feats), sink.value(protos));
    let (d, n) = (f.shape()[0], f.shape()[1]);
    let m = p.shape()[0];
    let (fd, pd, dist) = (f.data(), p.data(), out.data());
    let (want_f, want_p) = (sink.wants(feats), sink.wants(protos));
    let mut gf = if want_f { vec![0.0; d * n] } else { Vec::new() };
    let mut gp = if want_p { vec![0.0; m * d] } else { Vec::new() };
    for mi in 0..m {
        for ni in 0..n {
            let r = dist[mi * n + ni];
            if r == 0.0 {
                continue;
            }
            let g = grad[mi * n + ni] / r;
            for di in 0..d {
                let diff = g * (fd[di * n + ni] - pd[mi * d + di]);
                if want_f {
                    gf[di * n + ni] += diff;
                }
                if want_p {
                    gp[mi * d + di] -= diff;
                }
            }
        }
    }
    if want_f {
        sink.add(feats, &gf);
    }
    if want_p {
        sink.add(protos, &gp);
    }
}
