//! IoU metrics with per-class count aggregation.

use std::collections::{BTreeMap, BTreeSet};

use pemp_tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pixel counts of a binary prediction against a binary ground truth.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn from_masks(pred: &Tensor, gt: &Tensor) -> Result<Self> {
        if pred.shape() != gt.shape() {
            return Err(Error::Metrics(format!(
                "prediction {:?} and ground truth {:?} differ in shape",
                pred.shape(),
                gt.shape()
            )));
        }
        let mut c = Confusion::default();
        for (&p, &g) in pred.data().iter().zip(gt.data()) {
            match (p >= 0.5, g >= 0.5) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        Ok(c)
    }

    pub fn merge(self, other: Confusion) -> Confusion {
        Confusion {
            tp: self.tp + other.tp,
            fp: self.fp + other.fp,
            fn_: self.fn_ + other.fn_,
            tn: self.tn + other.tn,
        }
    }

    /// Foreground IoU; 1 when prediction and ground truth are both empty.
    pub fn fg_iou(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp + self.fn_)
    }

    pub fn bg_iou(&self) -> f64 {
        ratio(self.tn, self.tn + self.fp + self.fn_)
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// `|pred ∩ gt| / |pred ∪ gt|`, 1 when both are empty.
pub fn iou(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    Ok(Confusion::from_masks(pred, gt)?.fg_iou())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub class_id: usize,
    pub confusion: Confusion,
}

/// Foreground IoU of each class from counts summed over its episodes.
///
/// Every class in `classes` must have at least one episode.
pub fn per_class_iou(results: &[EpisodeResult], classes: &BTreeSet<usize>) -> Result<BTreeMap<usize, f64>> {
    let mut totals: BTreeMap<usize, Confusion> = BTreeMap::new();
    for r in results {
        let t = totals.entry(r.class_id).or_default();
        *t = t.merge(r.confusion);
    }
    classes
        .iter()
        .map(|c| {
            totals
                .get(c)
                .map(|t| (*c, t.fg_iou()))
                .ok_or_else(|| Error::Metrics(format!("class {c} has no episodes")))
        })
        .collect()
}

/// Unweighted mean of per-class IoUs.
pub fn mean_iou(results: &[EpisodeResult], classes: &BTreeSet<usize>) -> Result<f64> {
    if classes.is_empty() {
        return Err(Error::Metrics("no classes to average".into()));
    }
    let per = per_class_iou(results, classes)?;
    Ok(per.values().sum::<f64>() / per.len() as f64)
}

/// Mean of foreground and background IoU over all episodes pooled together.
pub fn binary_iou(results: &[EpisodeResult]) -> f64 {
    let t = results
        .iter()
        .fold(Confusion::default(), |acc, r| acc.merge(r.confusion));
    (t.fg_iou() + t.bg_iou()) / 2.0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(bits: &[u8]) -> Tensor {
        Tensor::new(&[1, 1, bits.len()], bits.iter().map(|&b| f64::from(b)).collect()).unwrap()
    }

    #[test]
    fn iou_cases() {
        assert_eq!(iou(&mask(&[1, 0, 1]), &mask(&[1, 0, 1])).unwrap(), 1.0);
        assert_eq!(iou(&mask(&[1, 1, 0, 0]), &mask(&[0, 0, 1, 1])).unwrap(), 0.0);
        assert_eq!(iou(&mask(&[1, 0, 0, 0]), &mask(&[1, 1, 0, 0])).unwrap(), 0.5);
        assert_eq!(iou(&mask(&[0, 0]), &mask(&[0, 0])).unwrap(), 1.0);
        assert!(iou(&mask(&[0, 0]), &mask(&[0, 0, 0])).is_err());
    }

    #[test]
    fn all_background_on_quarter_foreground() {
        let r = EpisodeResult {
            class_id: 0,
            confusion: Confusion::from_masks(&mask(&[0, 0, 0, 0]), &mask(&[1, 0, 0, 0])).unwrap(),
        };
        assert_eq!(binary_iou(&[r]), 0.375);
    }

    #[test]
    fn missing_class_is_an_error() {
        let r = EpisodeResult {
            class_id: 0,
            confusion: Confusion::default(),
        };
        assert!(mean_iou(&[r], &[0, 1].into()).is_err());
    }
}
