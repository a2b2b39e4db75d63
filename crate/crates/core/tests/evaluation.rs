mod common;

use std::collections::BTreeSet;

use pemp::data::{split_classes, Episode};
use pemp::eval::{
    binary_iou, evaluate_protocol, iou, mean_iou, Confusion, EpisodeResult, EvalReport, GroundTruthOracle, Predictor,
    ProtocolSpec,
};
use pemp::train::train_two_stage;
use pemp_tensor::Tensor;
use proptest::prelude::*;

use common::{tiny_config, tiny_dataset};

fn mask(h: usize, w: usize, f: impl Fn(usize, usize) -> bool) -> Tensor {
    Tensor::from_fn(&[1, h, w], |i| f(i / w, i % w) as u8 as f64)
}

#[test]
fn iou_examples() {
    let gt = mask(4, 4, |r, _| r < 2);
    assert_eq!(iou(&gt, &gt).unwrap(), 1.0);
    assert_eq!(iou(&mask(4, 4, |r, _| r >= 2), &gt).unwrap(), 0.0);
    assert_eq!(iou(&mask(4, 4, |r, _| r < 1), &gt).unwrap(), 0.5);
    assert_eq!(
        iou(&Tensor::zeros(&[1, 4, 4]), &Tensor::zeros(&[1, 4, 4])).unwrap(),
        1.0
    );
    assert!(iou(&gt, &Tensor::zeros(&[1, 2, 8])).is_err());
}

fn result(class_id: usize, pred: &Tensor, gt: &Tensor) -> EpisodeResult {
    EpisodeResult {
        class_id,
        confusion: Confusion::from_masks(pred, gt).unwrap(),
    }
}

#[test]
fn mean_iou_examples() {
    let gt = mask(5, 2, |r, _| r < 5);
    let classes: BTreeSet<usize> = [0, 1].into();
    let two = vec![
        result(0, &mask(5, 2, |r, _| r < 2), &gt),
        result(1, &mask(5, 2, |r, _| r < 3), &gt),
    ];
    assert!((mean_iou(&two, &classes).unwrap() - 0.5).abs() < 1e-15);
    let perfect = vec![result(0, &gt, &gt), result(1, &gt, &gt)];
    assert_eq!(mean_iou(&perfect, &classes).unwrap(), 1.0);
    assert_eq!(binary_iou(&perfect), 1.0);
}

#[test]
fn class_imbalance_does_not_skew_the_mean() {
    // Class 0: one episode at IoU 0.2. Class 1: nine episodes at IoU 1.
    let gt = mask(5, 1, |_, _| true);
    let mut results = vec![result(0, &mask(5, 1, |r, _| r == 0), &gt)];
    results.extend((0..9).map(|_| result(1, &gt, &gt)));
    let classes: BTreeSet<usize> = [0, 1].into();
    let m = mean_iou(&results, &classes).unwrap();
    assert!((m - 0.6).abs() < 1e-15);
    let pooled_per_episode = (0.2 + 9.0) / 10.0;
    assert!((m - pooled_per_episode).abs() > 0.3);
}

#[test]
fn all_background_binary_iou() {
    let gt = mask(4, 4, |r, c| r < 2 && c < 2);
    let r = vec![result(0, &Tensor::zeros(&[1, 4, 4]), &gt)];
    assert!((binary_iou(&r) - 0.375).abs() < 1e-15);
}

proptest! {
    #[test]
    fn iou_symmetric_and_bounded(a in prop::collection::vec(0u8..2, 24), b in prop::collection::vec(0u8..2, 24)) {
        let ta = Tensor::new(&[1, 4, 6], a.iter().map(|&v| v as f64).collect()).unwrap();
        let tb = Tensor::new(&[1, 4, 6], b.iter().map(|&v| v as f64).collect()).unwrap();
        let (x, y) = (iou(&ta, &tb).unwrap(), iou(&tb, &ta).unwrap());
        prop_assert_eq!(x, y);
        prop_assert!((0.0..=1.0).contains(&x));
    }

    #[test]
    fn binary_iou_ignores_class_labels(bits in prop::collection::vec(0u8..2, 3 * 16), gt_bits in prop::collection::vec(0u8..2, 3 * 16)) {
        let to_t = |s: &[u8]| Tensor::new(&[1, 4, 4], s.iter().map(|&v| v as f64).collect()).unwrap();
        let rs: Vec<EpisodeResult> = (0..3)
            .map(|i| result(i, &to_t(&bits[i * 16..(i + 1) * 16]), &to_t(&gt_bits[i * 16..(i + 1) * 16])))
            .collect();
        let relabeled: Vec<EpisodeResult> = rs.iter().map(|r| EpisodeResult { class_id: 7 - r.class_id, ..*r }).collect();
        prop_assert_eq!(binary_iou(&rs), binary_iou(&relabeled));
    }
}

#[test]
fn oracle_predictor_scores_one() {
    let c = tiny_config();
    let ds = tiny_dataset(&c);
    let split = split_classes(4, 0).unwrap();
    let spec = ProtocolSpec {
        shots: 1,
        episodes_per_run: 10,
        runs: 3,
        seed: 0,
    };
    let r = evaluate_protocol(&GroundTruthOracle, &ds, &split, &spec, "oracle", &c).unwrap();
    assert_eq!(r.mean_iou.mean, 1.0);
    assert_eq!(r.binary_iou.mean, 1.0);
    assert_eq!(r.mean_iou.std, 0.0);
}

struct FirstPixel;

impl Predictor for FirstPixel {
    fn predict_mask(&self, episode: &Episode) -> pemp::Result<Tensor> {
        let mut m = Tensor::zeros(episode.query.mask.shape());
        m.data_mut()[0] = 1.0;
        Ok(m)
    }
}

#[test]
fn single_run_has_zero_std_and_runs_differ() {
    let c = tiny_config();
    let ds = tiny_dataset(&c);
    let split = split_classes(4, 1).unwrap();
    let one = ProtocolSpec {
        shots: 1,
        episodes_per_run: 3,
        runs: 1,
        seed: 4,
    };
    let r = evaluate_protocol(&FirstPixel, &ds, &split, &one, "p", &c).unwrap();
    assert_eq!(r.mean_iou.std, 0.0);
    assert_eq!(r.runs.len(), 1);
    let many = ProtocolSpec { runs: 4, ..one };
    let r = evaluate_protocol(&FirstPixel, &ds, &split, &many, "p", &c).unwrap();
    let distinct: BTreeSet<u64> = r.runs.iter().map(|x| x.binary_iou.to_bits()).collect();
    assert!(distinct.len() > 1);
}

#[test]
fn report_round_trip_and_determinism() {
    let c = tiny_config();
    let ds = tiny_dataset(&c);
    let split = split_classes(4, 2).unwrap();
    let model = train_two_stage(&ds, &split, &c, &mut |_| {}).unwrap();
    let spec = ProtocolSpec::from_config(&c);
    let a = evaluate_protocol(&model, &ds, &split, &spec, "PEMP", &c).unwrap();
    let b = evaluate_protocol(&model, &ds, &split, &spec, "PEMP", &c).unwrap();
    assert_eq!(a.without_runtime(), b.without_runtime());
    assert_eq!(EvalReport::from_json(&a.to_json().unwrap()).unwrap(), a);
    assert_eq!(a.config, c.entries());
    assert_eq!(a.config_hash, c.hash());
    for v in a.per_class_iou.values() {
        assert!((0.0..=1.0).contains(v));
    }
}
