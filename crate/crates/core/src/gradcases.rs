//! Finite-difference cases for the model-level operations, complementing the
//! primitive cases of `pemp_tensor::gradcheck`.

use pemp_tensor::gradcheck::{primitive_cases, weighted_sum, GradCase};
use pemp_tensor::{Tensor, TensorError, Var};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::comm::{merge, region_stats};
use crate::error::Error;
use crate::proto::{
    adaptive_prototypes, baseline_predict, flatten_shots, fused_predict, masked_average_pool, mpm_attention, Region,
};
use crate::train::{boundary_map, weight_map, weighted_bce};

fn lift<T>(r: crate::Result<T>) -> pemp_tensor::Result<T> {
    r.map_err(|e| match e {
        Error::Tensor(t) => t,
        other => TensorError::InvalidArgument {
            op: "model",
            detail: other.to_string(),
        },
    })
}

fn mask_from(bits: &[u8], h: usize, w: usize) -> Tensor {
    Tensor::new(&[1, h, w], bits.iter().map(|&b| b as f64).collect()).expect("mask shape")
}

/// Support-to-loss pipeline on a 2x2 feature grid upsampled to 4x4.
///
/// A small `gamma` keeps the softmax away from saturation, where the
/// gradient is too small for a relative finite-difference comparison.
fn end_to_end<'t>(v: &[Var<'t>], gamma: f64) -> pemp_tensor::Result<Var<'t>> {
    let (support, query, bank_fg, bank_bg) = (v[0], v[1], v[2], v[3]);
    let support_mask = mask_from(&[1, 0, 1, 0], 2, 2);
    let label = mask_from(&[1, 1, 0, 0, 1, 1, 0, 0, 1, 1, 1, 0, 0, 0, 0, 0], 4, 4);
    let weight = weight_map(&boundary_map(&label), 5.0, false);
    lift((|| {
        let (flat, fg) = flatten_shots(&[(support, &support_mask)])?;
        let bg = fg.map(|x| 1.0 - x);
        let p_fg = adaptive_prototypes(flat, &fg, mpm_attention(flat, bank_fg)?, Region::Fg)?;
        let p_bg = adaptive_prototypes(flat, &bg, mpm_attention(flat, bank_bg)?, Region::Bg)?;
        let pred = fused_predict(query, p_fg, p_bg, gamma)?;
        let probs = pred.logits.resize_bilinear(4, 4)?.softmax(0)?;
        weighted_bce(probs, &label, &weight)
    })())
}

/// Model-level cases, each with at most 64 scalar parameters.
pub fn model_cases(seed: u64) -> Vec<GradCase> {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut rand_t = |shape: &[usize]| Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0));
    vec![
        GradCase::new("masked_average_pool", vec![rand_t(&[3, 3, 3])], |_, v| {
            let mask = mask_from(&[1, 0, 1, 1, 0, 0, 0, 1, 0], 3, 3);
            weighted_sum(lift(masked_average_pool(v[0], &mask))?, 11)
        }),
        GradCase::new("mpm_attention", vec![rand_t(&[3, 6]), rand_t(&[3, 3])], |_, v| {
            weighted_sum(lift(mpm_attention(v[0], v[1]))?, 12)
        }),
        GradCase::new("adaptive_prototypes", vec![rand_t(&[3, 6]), rand_t(&[2, 3])], |_, v| {
            let mask = Tensor::new(&[6], vec![1.0, 1.0, 0.0, 1.0, 0.0, 1.0]).expect("mask");
            let alpha = lift(mpm_attention(v[0], v[1]))?;
            weighted_sum(lift(adaptive_prototypes(v[0], &mask, alpha, Region::Fg))?, 13)
        }),
        GradCase::new(
            "baseline_predict",
            vec![rand_t(&[3, 2, 3]), rand_t(&[3]), rand_t(&[3])],
            |_, v| weighted_sum(lift(baseline_predict(v[0], v[1], v[2], 2.0))?.probs, 14),
        ),
        GradCase::new(
            "fused_predict",
            vec![rand_t(&[3, 2, 3]), rand_t(&[2, 3]), rand_t(&[2, 3])],
            |_, v| weighted_sum(lift(fused_predict(v[0], v[1], v[2], 2.0))?.probs, 15),
        ),
        GradCase::new(
            "comm_merge",
            vec![rand_t(&[2, 3, 3]), rand_t(&[2, 3, 3]), rand_t(&[2, 4]), rand_t(&[2])],
            |_, v| {
                let ls = mask_from(&[1, 1, 0, 1, 0, 0, 0, 0, 1], 3, 3);
                let lq = mask_from(&[0, 1, 1, 0, 1, 1, 0, 0, 0], 3, 3);
                let u = lift((|| {
                    let s = region_stats(v[0], &ls, false)?;
                    let q = region_stats(v[1], &lq, false)?;
                    merge(&[s], &q, v[2], v[3])
                })())?;
                weighted_sum(u, 16)
            },
        ),
        GradCase::new(
            "weighted_bce(fused_predict)",
            vec![rand_t(&[4, 2, 2]), rand_t(&[4, 2, 2]), rand_t(&[2, 4]), rand_t(&[2, 4])],
            |_, v| end_to_end(v, 2.0),
        ),
    ]
}

/// Every case of the finite-difference suite: primitives then model operations.
pub fn all_cases(seed: u64) -> Vec<GradCase> {
    let mut cases = primitive_cases(seed);
    cases.extend(model_cases(seed));
    cases
}
