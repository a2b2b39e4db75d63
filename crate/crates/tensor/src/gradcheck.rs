//! Central finite-difference gradient checking.

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Result of comparing analytic and numeric gradients for one input.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub input: usize,
    pub numel: usize,
    /// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)`.
    pub rel_err: f64,
    pub max_abs_err: f64,
}

/// Checks the gradient of a scalar function of `inputs`.
///
/// `build` records the function on the given tape from leaf vars created
/// for each input. Every input is treated as differentiable.
pub fn check_gradients<F>(inputs: &[Tensor], step: f64, build: F) -> Result<Vec<GradCheck>>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let analytic = {
        let tape = Tape::new();
        let vars: Vec<_> = inputs.iter().map(|t| tape.param(t.clone())).collect();
        let loss = build(&tape, &vars)?;
        let grads = tape.backward(loss)?;
        vars.iter()
            .map(|&v| grads.get(v).cloned().expect("param leaf has a gradient"))
            .collect::<Vec<_>>()
    };

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<_> = perturbed.iter().map(|t| tape.constant(t.clone())).collect();
        Ok(build(&tape, &vars)?.value().item())
    };

    let mut reports = Vec::with_capacity(inputs.len());
    let mut work = inputs.to_vec();
    for (idx, a) in analytic.iter().enumerate() {
        let mut numeric = vec![0.0; a.numel()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let orig = work[idx].data()[j];
            work[idx].data_mut()[j] = orig + step;
            let plus = eval(&work)?;
            work[idx].data_mut()[j] = orig - step;
            let minus = eval(&work)?;
            work[idx].data_mut()[j] = orig;
            *slot = (plus - minus) / (2.0 * step);
        }
        let diff: f64 = a
            .data()
            .iter()
            .zip(&numeric)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt();
        let na = a.norm_sq().sqrt();
        let nn = numeric.iter().map(|v| v * v).sum::<f64>().sqrt();
        let scale = na.max(nn);
        let rel_err = if scale < 1e-12 { diff } else { diff / scale };
        let max_abs_err = a
            .data()
            .iter()
            .zip(&numeric)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        reports.push(GradCheck {
            input: idx,
            numel: a.numel(),
            rel_err,
            max_abs_err,
        });
    }
    Ok(reports)
}

/// Worst relative error over all inputs.
pub fn worst_rel_err(reports: &[GradCheck]) -> f64 {
    reports.iter().map(|r| r.rel_err).fold(0.0, f64::max)
}

type Builder = Box<dyn for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>>;

/// One named finite-difference case.
pub struct GradCase {
    pub name: &'static str,
    pub inputs: Vec<Tensor>,
    build: Builder,
}

impl GradCase {
    pub fn new<F>(name: &'static str, inputs: Vec<Tensor>, build: F) -> Self
    where
        F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>> + 'static,
    {
        Self {
            name,
            inputs,
            build: Box::new(build),
        }
    }

    pub fn param_count(&self) -> usize {
        self.inputs.iter().map(Tensor::numel).sum()
    }

    pub fn run(&self, step: f64) -> Result<f64> {
        let reports = check_gradients(&self.inputs, step, |t, v| (self.build)(t, v))?;
        Ok(worst_rel_err(&reports))
    }
}

/// Reduces any tensor to a scalar with fixed pseudo-random weights, so every
/// output element contributes a distinct gradient.
pub fn weighted_sum<'t>(x: Var<'t>, salt: u64) -> Result<Var<'t>> {
    let v = x.value();
    let weights = Tensor::from_fn(v.shape(), |i| {
        let h = (i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ salt.wrapping_mul(0xD1B5_4A32_D192_ED03);
        ((h >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    });
    let w = x.tape().constant(weights);
    x.mul(w)?.sum()
}

/// Finite-difference cases covering every differentiable primitive.
/// Each case has at most 64 scalar parameters.
pub fn primitive_cases(seed: u64) -> Vec<GradCase> {
    use crate::ops::{ConvSpec, Mode};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    let mut rng = StdRng::seed_from_u64(seed);
    let mut rand_t =
        |shape: &[usize], lo: f64, hi: f64| -> Tensor { Tensor::from_fn(shape, |_| rng.random_range(lo..hi)) };

    let mut cases = vec![
        GradCase::new(
            "add",
            vec![rand_t(&[3, 4], -1.0, 1.0), rand_t(&[3, 4], -1.0, 1.0)],
            |_, v| weighted_sum(v[0].add(v[1])?, 1),
        ),
        GradCase::new(
            "sub",
            vec![rand_t(&[3, 4], -1.0, 1.0), rand_t(&[3, 4], -1.0, 1.0)],
            |_, v| weighted_sum(v[0].sub(v[1])?, 2),
        ),
        GradCase::new(
            "mul",
            vec![rand_t(&[3, 4], -1.0, 1.0), rand_t(&[3, 4], -1.0, 1.0)],
            |_, v| weighted_sum(v[0].mul(v[1])?, 3),
        ),
        GradCase::new("scale+add_scalar", vec![rand_t(&[10], -1.0, 1.0)], |_, v| {
            weighted_sum(v[0].scale(-2.5)?.add_scalar(0.7)?, 4)
        }),
        GradCase::new("relu", vec![rand_t(&[20], -1.0, 1.0)], |_, v| {
            weighted_sum(v[0].relu()?, 5)
        }),
        GradCase::new("ln", vec![rand_t(&[12], 0.2, 3.0)], |_, v| weighted_sum(v[0].ln()?, 6)),
        GradCase::new("exp", vec![rand_t(&[12], -2.0, 2.0)], |_, v| {
            weighted_sum(v[0].exp()?, 7)
        }),
        GradCase::new(
            "matmul",
            vec![rand_t(&[3, 4], -1.0, 1.0), rand_t(&[4, 5], -1.0, 1.0)],
            |_, v| weighted_sum(v[0].matmul(v[1])?, 8),
        ),
        GradCase::new(
            "matmul_nt",
            vec![rand_t(&[3, 4], -1.0, 1.0), rand_t(&[5, 4], -1.0, 1.0)],
            |_, v| weighted_sum(v[0].matmul_nt(v[1])?, 9),
        ),
        GradCase::new(
            "concat+slice",
            vec![rand_t(&[2, 3, 2], -1.0, 1.0), rand_t(&[2, 1, 2], -1.0, 1.0)],
            |_, v| {
                let c = crate::concat(&[v[0], v[1]], 1)?;
                weighted_sum(c.slice(1, 1, 3)?, 10)
            },
        ),
        GradCase::new("reshape+broadcast", vec![rand_t(&[2, 3], -1.0, 1.0)], |_, v| {
            weighted_sum(v[0].reshape(&[6])?.broadcast_spatial(2, 3)?, 11)
        }),
        GradCase::new("softmax", vec![rand_t(&[3, 5], -3.0, 3.0)], |_, v| {
            let a = weighted_sum(v[0].softmax(0)?, 12)?;
            let b = weighted_sum(v[0].softmax(1)?, 13)?;
            a.add(b)
        }),
        GradCase::new("max_axis", vec![rand_t(&[4, 6], -1.0, 1.0)], |_, v| {
            weighted_sum(v[0].max_axis(0)?.0, 14)
        }),
        GradCase::new("spatial_sum/mean/max", vec![rand_t(&[3, 3, 4], -1.0, 1.0)], |_, v| {
            let a = weighted_sum(v[0].spatial_sum()?, 15)?;
            let b = weighted_sum(v[0].spatial_mean()?, 16)?;
            let c = weighted_sum(v[0].spatial_max()?, 17)?;
            a.add(b)?.add(c)
        }),
        GradCase::new("mask_channels", vec![rand_t(&[3, 3, 3], -1.0, 1.0)], |_, v| {
            let mask = Tensor::from_fn(&[1, 3, 3], |i| (i % 2) as f64);
            weighted_sum(v[0].mask_channels(&mask)?, 18)
        }),
        GradCase::new(
            "cosine_map",
            vec![rand_t(&[4, 6], -1.0, 1.0), rand_t(&[3, 4], -1.0, 1.0)],
            |_, v| weighted_sum(v[0].cosine_map(v[1])?, 19),
        ),
        GradCase::new(
            "distance_map",
            vec![rand_t(&[4, 6], -1.0, 1.0), rand_t(&[3, 4], -1.0, 1.0)],
            |_, v| weighted_sum(v[0].distance_map(v[1])?, 20),
        ),
        GradCase::new(
            "conv2d",
            vec![
                rand_t(&[2, 4, 4], -1.0, 1.0),
                rand_t(&[1, 2, 3, 3], -1.0, 1.0),
                rand_t(&[1], -1.0, 1.0),
            ],
            |_, v| weighted_sum(v[0].conv2d(v[1], Some(v[2]), ConvSpec::same(3, 1))?, 21),
        ),
        GradCase::new(
            "conv2d dilated/strided",
            vec![
                rand_t(&[1, 6, 6], -1.0, 1.0),
                rand_t(&[2, 1, 3, 3], -1.0, 1.0),
                rand_t(&[2], -1.0, 1.0),
            ],
            |_, v| {
                let a = weighted_sum(v[0].conv2d(v[1], Some(v[2]), ConvSpec::same(3, 2))?, 22)?;
                let spec = ConvSpec {
                    stride: 2,
                    pad: 1,
                    dilation: 1,
                };
                let b = weighted_sum(v[0].conv2d(v[1], Some(v[2]), spec)?, 23)?;
                a.add(b)
            },
        ),
        GradCase::new("max_pool2", vec![rand_t(&[2, 4, 4], -1.0, 1.0)], |_, v| {
            weighted_sum(v[0].max_pool2()?, 24)
        }),
        GradCase::new("resize_bilinear", vec![rand_t(&[2, 3, 4], -1.0, 1.0)], |_, v| {
            let up = weighted_sum(v[0].resize_bilinear(7, 5)?, 25)?;
            let down = weighted_sum(v[0].resize_bilinear(2, 2)?, 26)?;
            up.add(down)
        }),
        GradCase::new("dropout", vec![rand_t(&[4, 2, 2], -1.0, 1.0)], |_, v| {
            let mut r = StdRng::seed_from_u64(99);
            weighted_sum(v[0].dropout_channels(0.5, Mode::Train, &mut r)?, 27)
        }),
        GradCase::new("weighted_bce", vec![rand_t(&[1, 4, 4], 0.05, 0.95)], |_, v| {
            let y = Tensor::from_fn(&[1, 4, 4], |i| (i % 3 == 0) as u8 as f64);
            let w = Tensor::from_fn(&[1, 4, 4], |i| 1.0 + (i as f64) / 16.0);
            v[0].weighted_bce(&y, &w)
        }),
    ];
    cases.push(GradCase::new(
        "softmax+cross-entropy",
        vec![rand_t(&[5], -2.0, 2.0)],
        |t, v| {
            let y = t.constant(Tensor::new(&[5], vec![0.0, 0.0, 1.0, 0.0, 0.0])?);
            v[0].softmax(0)?.ln()?.mul(y)?.sum()?.neg()
        },
    ));
    cases
}
