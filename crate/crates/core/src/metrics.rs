//! Binary change-detection scoring: confusion counts and the derived
//! precision / recall / F1 / IoU.

use crate::error::Result;
use crate::tensor::{Scalar, Tensor};
use serde::{Deserialize, Serialize};

/// Confusion counts plus derived scores over the positive (changed) class.
///
/// Conventions for empty denominators: a metric is 0 when its denominator
/// is 0, except when there are no positives anywhere and none predicted
/// (tp = fp = fn = 0), which scores 1.0 across the board.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tp: u64,
    pub fp: u64,
    pub r#fn: u64,
    pub tn: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub iou: f64,
}

impl MetricsReport {
    pub fn from_counts(tp: u64, fp: u64, fn_: u64, tn: u64) -> MetricsReport {
        let (precision, recall, f1, iou);
        if tp == 0 && fp == 0 && fn_ == 0 {
            precision = 1.0;
            recall = 1.0;
            f1 = 1.0;
            iou = 1.0;
        } else {
            precision = ratio(tp, tp + fp);
            recall = ratio(tp, tp + fn_);
            f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            iou = ratio(tp, tp + fn_ + fp);
        }
        MetricsReport {
            tp,
            fp,
            r#fn: fn_,
            tn,
            precision,
            recall,
            f1,
            iou,
        }
    }

    /// Aggregate by summing counts, then recompute the ratios.
    pub fn merge(reports: &[MetricsReport]) -> MetricsReport {
        let (mut tp, mut fp, mut fn_, mut tn) = (0u64, 0u64, 0u64, 0u64);
        for r in reports {
            tp += r.tp;
            fp += r.fp;
            fn_ += r.r#fn;
            tn += r.tn;
        }
        MetricsReport::from_counts(tp, fp, fn_, tn)
    }

    pub fn total_pixels(&self) -> u64 {
        self.tp + self.fp + self.r#fn + self.tn
    }

    /// Fraction of pixels classified correctly.
    pub fn pixel_accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total_pixels())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("metrics serialize")
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Count a confusion matrix from paired prediction/truth booleans.
pub fn confusion_counts(pairs: impl Iterator<Item = (bool, bool)>) -> (u64, u64, u64, u64) {
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (pred, truth) in pairs {
        match (pred, truth) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    (tp, fp, fn_, tn)
}

/// Score logits against a binary mask: a pixel is predicted changed when
/// `sigmoid(logit) >= threshold`.
pub fn compute_metrics<S: Scalar>(
    pred_logits: &Tensor<S>,
    truth: &Tensor<S>,
    threshold: f64,
) -> Result<MetricsReport> {
    if pred_logits.shape() != truth.shape() {
        return Err(crate::error::Error::shape(
            "compute_metrics",
            format!("{:?} vs {:?}", pred_logits.shape(), truth.shape()),
        ));
    }
    // sigmoid(z) >= t  <=>  z >= ln(t / (1 - t))
    let cut = S::of((threshold / (1.0 - threshold)).ln());
    let (tp, fp, fn_, tn) = confusion_counts(
        pred_logits
            .data()
            .iter()
            .zip(truth.data())
            .map(|(&z, &y)| (z >= cut, y == S::ONE)),
    );
    Ok(MetricsReport::from_counts(tp, fp, fn_, tn))
}

/// Score an already-binarized prediction mask against the truth mask.
pub fn compute_metrics_binary<S: Scalar>(pred: &Tensor<S>, truth: &Tensor<S>) -> Result<MetricsReport> {
    if pred.shape() != truth.shape() {
        return Err(crate::error::Error::shape(
            "compute_metrics",
            format!("{:?} vs {:?}", pred.shape(), truth.shape()),
        ));
    }
    let (tp, fp, fn_, tn) = confusion_counts(
        pred.data()
            .iter()
            .zip(truth.data())
            .map(|(&p, &y)| (p.to_f64() >= 0.5, y == S::ONE)),
    );
    Ok(MetricsReport::from_counts(tp, fp, fn_, tn))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn perfect_prediction_scores_one() {
        let y = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0f64, 0.0, 1.0, 0.0]);
        let z = y.map(|v| if v == 1.0 { 50.0 } else { -50.0 });
        let m = compute_metrics(&z, &y, 0.5).unwrap();
        assert_eq!((m.precision, m.recall, m.f1, m.iou), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn empty_and_correct_scores_one_wrong_scores_zero() {
        let all_neg = MetricsReport::from_counts(0, 0, 0, 100);
        assert_eq!(all_neg.f1, 1.0);
        assert_eq!(all_neg.iou, 1.0);
        let missed = MetricsReport::from_counts(0, 0, 5, 95);
        assert_eq!(missed.precision, 0.0);
        assert_eq!(missed.recall, 0.0);
        assert_eq!(missed.f1, 0.0);
        let spurious = MetricsReport::from_counts(0, 5, 0, 95);
        assert_eq!(spurious.precision, 0.0);
        assert_eq!(spurious.f1, 0.0);
    }

    #[test]
    fn half_covered_prediction_example() {
        // predict everything positive, truth half positive on 100 pixels
        let m = MetricsReport::from_counts(50, 50, 0, 0);
        assert_eq!(m.precision, 0.5);
        assert_eq!(m.recall, 1.0);
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.iou, 0.5);
    }

    #[test]
    fn iou_equals_f1_over_two_minus_f1() {
        let mut rng = Rng::from_seed(8);
        for _ in 0..200 {
            let m = MetricsReport::from_counts(
                rng.next_below(1000),
                rng.next_below(1000),
                rng.next_below(1000),
                rng.next_below(1000),
            );
            if m.f1 > 0.0 {
                assert!((m.iou - m.f1 / (2.0 - m.f1)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matches_brute_force_confusion_loop() {
        let mut rng = Rng::from_seed(12);
        for _ in 0..50 {
            let n = 32 * 32;
            let truth: Vec<f64> = (0..n).map(|_| rng.next_below(2) as f64).collect();
            let logits: Vec<f64> = (0..n).map(|_| rng.uniform(-3.0, 3.0)).collect();
            let yt = Tensor::from_vec(&[1, 1, 32, 32], truth.clone());
            let zt = Tensor::from_vec(&[1, 1, 32, 32], logits.clone());
            let m = compute_metrics(&zt, &yt, 0.5).unwrap();
            let (mut tp, mut fp, mut fn_, mut tn) = (0u64, 0u64, 0u64, 0u64);
            for (z, y) in logits.iter().zip(&truth) {
                let p = 1.0 / (1.0 + (-z).exp()) >= 0.5;
                let t = *y == 1.0;
                match (p, t) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    (false, false) => tn += 1,
                }
            }
            assert_eq!((m.tp, m.fp, m.r#fn, m.tn), (tp, fp, fn_, tn));
            assert_eq!(m.total_pixels(), n as u64);
        }
    }

    #[test]
    fn json_round_trip_keeps_keys_and_precision() {
        let m = MetricsReport::from_counts(3, 1, 2, 10);
        let json = m.to_json();
        for key in ["\"tp\"", "\"fp\"", "\"fn\"", "\"tn\"", "\"precision\"", "\"recall\"", "\"f1\"", "\"iou\""] {
            assert!(json.contains(key), "missing {key} in {json}");
        }
        let back: MetricsReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);
    }
}
