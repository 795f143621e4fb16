//! Evaluation metrics over binarized predictions: Dice, Jaccard,
//! sensitivity, specificity and the fixed-threshold balanced-accuracy AUC,
//! all derived from one confusion tally.
//!
//! Degenerate denominators resolve to 1.0 (an empty class contributes no
//! error), so a perfect prediction scores 1.0 on every metric. A true
//! ROC-AUC over the soft predictions is available separately as
//! [`roc_auc`] for diagnostics; it is never substituted into the report.

use std::ops::Add;

use crate::error::{Error, Result};
use crate::gtgen::BinaryMask;
use crate::tensor::Tensor;

/// Default probability cutoff for [`binarize`].
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Pixel tallies of a prediction against ground truth.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub true_pos: u64,
    pub false_pos: u64,
    pub true_neg: u64,
    pub false_neg: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.true_pos + self.false_pos + self.true_neg + self.false_neg
    }
}

impl Add for ConfusionCounts {
    type Output = ConfusionCounts;

    fn add(self, rhs: ConfusionCounts) -> ConfusionCounts {
        ConfusionCounts {
            true_pos: self.true_pos + rhs.true_pos,
            false_pos: self.false_pos + rhs.false_pos,
            true_neg: self.true_neg + rhs.true_neg,
            false_neg: self.false_neg + rhs.false_neg,
        }
    }
}

/// Threshold a probability map into a mask: 1 where `p >= threshold`.
///
/// Accepts `[H,W]`, `[H,W,1]` or `[1,H,W,1]` tensors.
pub fn binarize(y_hat: &Tensor, threshold: f64) -> Result<BinaryMask> {
    let (h, w) = plane_dims(y_hat)?;
    let m = y_hat
        .data()
        .iter()
        .map(|&p| (p >= threshold) as u8)
        .collect();
    BinaryMask::new(w, h, m)
}

fn plane_dims(t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [h, w] => Ok((*h, *w)),
        [h, w, 1] => Ok((*h, *w)),
        [1, h, w, 1] => Ok((*h, *w)),
        other => Err(Error::ShapeMismatch(format!(
            "expected a single-plane tensor, got shape {other:?}"
        ))),
    }
}

/// Tally TP/FP/TN/FN between a predicted and a ground-truth mask.
pub fn confusion(pred: &BinaryMask, gt: &BinaryMask) -> Result<ConfusionCounts> {
    if pred.width() != gt.width() || pred.height() != gt.height() {
        return Err(Error::DimensionMismatch(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height()
        )));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.values().iter().zip(gt.values()) {
        match (p, g) {
            (1, 1) => c.true_pos += 1,
            (1, 0) => c.false_pos += 1,
            (0, 0) => c.true_neg += 1,
            _ => c.false_neg += 1,
        }
    }
    Ok(c)
}

/// Dice overlap `2 TP / (2 TP + FP + FN)`; 1.0 when both masks are empty.
pub fn dice_index(c: &ConfusionCounts) -> f64 {
    let denom = 2 * c.true_pos + c.false_pos + c.false_neg;
    if denom == 0 {
        return 1.0;
    }
    2.0 * c.true_pos as f64 / denom as f64
}

/// Jaccard overlap `TP / (TP + FP + FN)`; 1.0 when both masks are empty.
pub fn jaccard_index(c: &ConfusionCounts) -> f64 {
    let denom = c.true_pos + c.false_pos + c.false_neg;
    if denom == 0 {
        return 1.0;
    }
    c.true_pos as f64 / denom as f64
}

/// True-positive rate `TP / (TP + FN)`; 1.0 when there are no positives.
pub fn sensitivity(c: &ConfusionCounts) -> f64 {
    let denom = c.true_pos + c.false_neg;
    if denom == 0 {
        return 1.0;
    }
    c.true_pos as f64 / denom as f64
}

/// True-negative rate `TN / (TN + FP)`; 1.0 when there are no negatives.
pub fn specificity(c: &ConfusionCounts) -> f64 {
    let denom = c.true_neg + c.false_pos;
    if denom == 0 {
        return 1.0;
    }
    c.true_neg as f64 / denom as f64
}

/// Fixed-threshold balanced accuracy,
/// `1 - (FP/(FP+TN) + FN/(FN+TP)) / 2`. A degenerate denominator
/// contributes zero error, matching the sensitivity/specificity
/// conventions.
pub fn auc_balanced(c: &ConfusionCounts) -> f64 {
    let fpr = if c.false_pos + c.true_neg == 0 {
        0.0
    } else {
        c.false_pos as f64 / (c.false_pos + c.true_neg) as f64
    };
    let fnr = if c.false_neg + c.true_pos == 0 {
        0.0
    } else {
        c.false_neg as f64 / (c.false_neg + c.true_pos) as f64
    };
    1.0 - 0.5 * (fpr + fnr)
}

/// Diagnostic ROC-AUC: trapezoidal integral of the ROC curve sampled at
/// the 256 thresholds k/255 over the soft predictions. Not part of the
/// report rows.
pub fn roc_auc(y_hat: &Tensor, gt: &BinaryMask) -> Result<f64> {
    let (h, w) = plane_dims(y_hat)?;
    if w != gt.width() || h != gt.height() {
        return Err(Error::DimensionMismatch(format!(
            "prediction {w}x{h} vs ground truth {}x{}",
            gt.width(),
            gt.height()
        )));
    }
    let positives = gt.count_ones() as f64;
    let negatives = (gt.values().len() - gt.count_ones()) as f64;

    let rates = |threshold: f64| -> (f64, f64) {
        let mut tp = 0u64;
        let mut fp = 0u64;
        for (&p, &g) in y_hat.data().iter().zip(gt.values()) {
            if p >= threshold {
                if g == 1 {
                    tp += 1;
                } else {
                    fp += 1;
                }
            }
        }
        let tpr = if positives == 0.0 {
            1.0
        } else {
            tp as f64 / positives
        };
        let fpr = if negatives == 0.0 {
            0.0
        } else {
            fp as f64 / negatives
        };
        (fpr, tpr)
    };

    let mut area = 0.0;
    let (mut prev_fpr, mut prev_tpr) = (0.0, 0.0);
    for k in (0..=255u32).rev() {
        let (fpr, tpr) = rates(k as f64 / 255.0);
        area += (fpr - prev_fpr) * (tpr + prev_tpr) * 0.5;
        prev_fpr = fpr;
        prev_tpr = tpr;
    }
    area += (1.0 - prev_fpr) * (1.0 + prev_tpr) * 0.5;
    Ok(area)
}

/// One report row in the experiment's table layout.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub loss_name: String,
    pub dice: f64,
    pub jaccard: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub auc: f64,
    pub avg: f64,
}

impl MetricRow {
    pub fn from_counts(loss_name: impl Into<String>, c: &ConfusionCounts) -> Self {
        Self::from_metrics(
            loss_name,
            dice_index(c),
            jaccard_index(c),
            sensitivity(c),
            specificity(c),
            auc_balanced(c),
        )
    }

    pub fn from_metrics(
        loss_name: impl Into<String>,
        dice: f64,
        jaccard: f64,
        sensitivity: f64,
        specificity: f64,
        auc: f64,
    ) -> Self {
        let avg = (dice + jaccard + sensitivity + specificity + auc) / 5.0;
        MetricRow {
            loss_name: loss_name.into(),
            dice,
            jaccard,
            sensitivity,
            specificity,
            auc,
            avg,
        }
    }

    pub fn csv_header() -> &'static str {
        "loss,dice,jaccard,sensitivity,specificity,auc,avg"
    }

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.loss_name,
            self.dice,
            self.jaccard,
            self.sensitivity,
            self.specificity,
            self.auc,
            self.avg
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_counts(rng: &mut ChaCha8Rng) -> ConfusionCounts {
        ConfusionCounts {
            true_pos: rng.random_range(0..500),
            false_pos: rng.random_range(0..500),
            true_neg: rng.random_range(0..500),
            false_neg: rng.random_range(0..500),
        }
    }

    fn random_mask(w: usize, h: usize, rng: &mut ChaCha8Rng) -> BinaryMask {
        let m = (0..w * h).map(|_| rng.random_range(0..=1u8)).collect();
        BinaryMask::new(w, h, m).unwrap()
    }

    /// Naive per-pixel tally, the independent oracle for `confusion`.
    fn confusion_by_double_loop(pred: &BinaryMask, gt: &BinaryMask) -> ConfusionCounts {
        let mut c = ConfusionCounts::default();
        for i in 0..pred.height() {
            for j in 0..pred.width() {
                let p = pred.at(i, j);
                let g = gt.at(i, j);
                if p == 1 && g == 1 {
                    c.true_pos += 1;
                } else if p == 1 && g == 0 {
                    c.false_pos += 1;
                } else if p == 0 && g == 0 {
                    c.true_neg += 1;
                } else {
                    c.false_neg += 1;
                }
            }
        }
        c
    }

    #[test]
    fn binarize_boundary_and_idempotence() {
        let t = Tensor::new(vec![2, 2], vec![0.5, 0.49, 0.51, 0.0]).unwrap();
        let mask = binarize(&t, DEFAULT_THRESHOLD).unwrap();
        assert_eq!(mask.values(), &[1, 0, 1, 0]);

        let as_tensor = Tensor::new(
            vec![2, 2],
            mask.values().iter().map(|&v| v as f64).collect(),
        )
        .unwrap();
        let again = binarize(&as_tensor, DEFAULT_THRESHOLD).unwrap();
        assert_eq!(again, mask);
    }

    #[test]
    fn binarize_all_below_threshold() {
        let t = Tensor::filled(&[1, 4, 4, 1], 0.49);
        assert_eq!(binarize(&t, 0.5).unwrap().count_ones(), 0);
    }

    #[test]
    fn confusion_simple_cases() {
        let ones = BinaryMask::new(2, 2, vec![1; 4]).unwrap();
        let zeros = BinaryMask::zeros(2, 2);
        let c = confusion(&ones, &ones).unwrap();
        assert_eq!(
            c,
            ConfusionCounts {
                true_pos: 4,
                ..Default::default()
            }
        );
        let c = confusion(&ones, &zeros).unwrap();
        assert_eq!(c.false_pos, 4);
        assert_eq!(c.total(), 4);
    }

    #[test]
    fn confusion_matches_double_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let pred = random_mask(64, 64, &mut rng);
            let gt = random_mask(64, 64, &mut rng);
            assert_eq!(
                confusion(&pred, &gt).unwrap(),
                confusion_by_double_loop(&pred, &gt)
            );
        }
    }

    #[test]
    fn metric_hand_values() {
        let c = ConfusionCounts {
            true_pos: 3,
            false_pos: 1,
            true_neg: 0,
            false_neg: 1,
        };
        assert!((dice_index(&c) - 0.75).abs() < 1e-15);
        assert!((jaccard_index(&c) - 0.6).abs() < 1e-15);
        assert!((sensitivity(&c) - 0.75).abs() < 1e-15);

        let c = ConfusionCounts {
            true_neg: 3,
            false_pos: 1,
            ..Default::default()
        };
        assert!((specificity(&c) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn degenerate_denominators_resolve_to_one() {
        let empty = ConfusionCounts::default();
        assert_eq!(dice_index(&empty), 1.0);
        assert_eq!(jaccard_index(&empty), 1.0);
        assert_eq!(sensitivity(&empty), 1.0);
        assert_eq!(specificity(&empty), 1.0);
        assert_eq!(auc_balanced(&empty), 1.0);

        // No actual positives, no false alarms: sensitivity 1 by convention.
        let c = ConfusionCounts {
            true_neg: 10,
            ..Default::default()
        };
        assert_eq!(sensitivity(&c), 1.0);
    }

    #[test]
    fn auc_symmetry_point() {
        let c = ConfusionCounts {
            true_pos: 5,
            false_neg: 5,
            false_pos: 7,
            true_neg: 7,
        };
        assert!((auc_balanced(&c) - 0.5).abs() < 1e-15);
        let perfect = ConfusionCounts {
            true_pos: 9,
            true_neg: 4,
            ..Default::default()
        };
        assert_eq!(auc_balanced(&perfect), 1.0);
    }

    #[test]
    fn algebraic_identities_over_random_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..2000 {
            let c = random_counts(&mut rng);
            // dice = 2J/(1+J); equality up to f64 roundoff of the two routes.
            let j = jaccard_index(&c);
            assert!((dice_index(&c) - 2.0 * j / (1.0 + j)).abs() < 1e-12);
            // The balanced accuracy rearranges to the mean of
            // sensitivity and specificity.
            assert!(
                (auc_balanced(&c) - 0.5 * (sensitivity(&c) + specificity(&c))).abs() < 1e-12
            );
        }
    }

    #[test]
    fn swapping_pred_and_gt_swaps_fp_and_fn() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_mask(16, 16, &mut rng);
        let b = random_mask(16, 16, &mut rng);
        let ab = confusion(&a, &b).unwrap();
        let ba = confusion(&b, &a).unwrap();
        assert_eq!(ab.true_pos, ba.true_pos);
        assert_eq!(ab.true_neg, ba.true_neg);
        assert_eq!(ab.false_pos, ba.false_neg);
        assert_eq!(ab.false_neg, ba.false_pos);
        assert_eq!(dice_index(&ab), dice_index(&ba));
        assert_eq!(jaccard_index(&ab), jaccard_index(&ba));
    }

    #[test]
    fn all_metrics_are_one_for_identical_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mask = random_mask(12, 9, &mut rng);
        let c = confusion(&mask, &mask).unwrap();
        let row = MetricRow::from_counts("bce", &c);
        for v in [row.dice, row.jaccard, row.sensitivity, row.specificity, row.auc, row.avg] {
            assert_eq!(v, 1.0);
        }
    }

    #[test]
    fn csv_layout() {
        let row = MetricRow::from_metrics("dice_bce", 0.5, 0.25, 1.0, 0.75, 0.875);
        assert_eq!(MetricRow::csv_header(), "loss,dice,jaccard,sensitivity,specificity,auc,avg");
        assert_eq!(
            row.to_csv_row(),
            "dice_bce,0.500000,0.250000,1.000000,0.750000,0.875000,0.675000"
        );
    }

    #[test]
    fn roc_auc_separable_predictions_score_one() {
        let gt = BinaryMask::new(2, 2, vec![1, 1, 0, 0]).unwrap();
        let probs = Tensor::new(vec![2, 2], vec![0.9, 0.8, 0.2, 0.1]).unwrap();
        let auc = roc_auc(&probs, &gt).unwrap();
        assert!((auc - 1.0).abs() < 1e-12);

        // Reversed scores are maximally wrong.
        let probs = Tensor::new(vec![2, 2], vec![0.1, 0.2, 0.8, 0.9]).unwrap();
        let auc = roc_auc(&probs, &gt).unwrap();
        assert!(auc < 0.05);
    }
}
