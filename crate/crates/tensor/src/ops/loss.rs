use std::rc::Rc;

use crate::error::{shape_err, Result};
use crate::op::Op;
use crate::tape::{GradSink, Var};
use crate::tensor::Tensor;

/// Probabilities are clamped to `[PROB_FLOOR, 1 - PROB_FLOOR]` inside the log.
pub const PROB_FLOOR: f64 = 1e-7;

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

impl<'t> Var<'t> {
    /// Pixel-weighted binary cross-entropy, averaged over all pixels:
    /// `-(1/N) Σ wᵢ (yᵢ ln p̂ᵢ + (1-yᵢ) ln(1-p̂ᵢ))` with `p̂` clamped.
    ///
    /// `self` holds foreground probabilities; `target` and `weight` are constants
    /// with the same element count.
    pub fn weighted_bce(self, target: &Tensor, weight: &Tensor) -> Result<Var<'t>> {
        let p = self.value();
        let n = p.numel();
        if target.numel() != n || weight.numel() != n {
            return shape_err(
                "weighted_bce",
                format!(
                    "prob {:?}, target {:?}, weight {:?}",
                    p.shape(),
                    target.shape(),
                    weight.shape()
                ),
            );
        }
        let mut acc = 0.0;
        for ((&pv, &y), &w) in p.data().iter().zip(target.data()).zip(weight.data()) {
            let pc = clamp_prob(pv);
            acc += w * (y * pc.ln() + (1.0 - y) * (1.0 - pc).ln());
        }
        let loss = Tensor::scalar(-acc / n as f64);
        self.tape.record(
            "weighted_bce",
            loss,
            Op::WeightedBce {
                prob: self.id,
                target: Rc::new(target.clone()),
                weight: Rc::new(weight.clone()),
            },
        )
    }
}

pub(crate) fn weighted_bce_backward(
    prob: usize,
    target: &Tensor,
    weight: &Tensor,
    grad: &[f64],
    sink: &mut GradSink<'_>,
) {
    if !sink.wants(prob) {
        return;
    }
    let p = sink.value(prob).data();
    let scale = -grad[0] / p.len() as f64;
    let slot = sink.slot(prob);
    for (((s, &pv), &y), &w) in slot.iter_mut().zip(p).zip(target.data()).zip(weight.data()) {
        // the clamp has zero derivative outside its interval
        if !(PROB_FLOOR..=1.0 - PROB_FLOOR).contains(&pv) {
            continue;
        }
        *s += scale * w * (y / pv - (1.0 - y) / (1.0 - pv));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tape;

    #[test]
    fn uniform_half_prediction_costs_ln_two() {
        let tape = Tape::new();
        let p = tape.constant(Tensor::full(&[1, 4, 4], 0.5));
        let y = Tensor::from_fn(&[1, 4, 4], |i| (i % 3 == 0) as u8 as f64);
        let w = Tensor::ones(&[1, 4, 4]);
        let l = p.weighted_bce(&y, &w).unwrap().value().item();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn perfect_prediction_is_near_zero_and_linear_in_weight() {
        let tape = Tape::new();
        let y = Tensor::from_fn(&[1, 3, 3], |i| (i % 2) as f64);
        let p = tape.constant(y.clone());
        let w = Tensor::full(&[1, 3, 3], 1.7);
        let l = p.weighted_bce(&y, &w).unwrap().value().item();
        // only the clamp floor contributes: mean(w)·|ln(1-1e-7)|
        let floor = 1.7 * (1.0 - PROB_FLOOR).ln().abs();
        assert!(l >= 0.0 && l <= floor * (1.0 + 1e-9) && l < 1e-6);

        let q = tape.constant(Tensor::full(&[1, 3, 3], 0.3));
        let l1 = q.weighted_bce(&y, &w).unwrap().value().item();
        let w2 = w.map(|v| 2.0 * v);
        let l2 = q.weighted_bce(&y, &w2).unwrap().value().item();
        assert!((l2 - 2.0 * l1).abs() < 1e-14);
    }
}
