//! Confusion-matrix accumulation and the evaluation quantities reported
//! by the experiment tables: per-class IoU and accuracy, mIoU, mAcc.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// K x K pixel confusion matrix: `counts[gt][pred]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        ConfusionMatrix { num_classes, counts: vec![0; num_classes * num_classes] }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    #[inline]
    pub fn count(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.num_classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Add one mask pair. Associative across batches: accumulating an
    /// image in pieces equals accumulating it whole.
    pub fn accumulate(&mut self, pred: &[u8], gt: &[u8]) -> Result<()> {
        if pred.len() != gt.len() {
            return Err(CoreError::ShapeMismatch(format!(
                "pred has {} pixels, gt has {}",
                pred.len(),
                gt.len()
            )));
        }
        let k = self.num_classes;
        for (&p, &g) in pred.iter().zip(gt) {
            let (p, g) = (p as usize, g as usize);
            if p >= k || g >= k {
                return Err(CoreError::ClassOutOfRange {
                    value: p.max(g),
                    num_classes: k,
                    context: String::from("confusion matrix accumulate"),
                });
            }
            self.counts[g * k + p] += 1;
        }
        Ok(())
    }

    /// Entrywise sum, for parallel evaluation with a final reduction.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.num_classes != self.num_classes {
            return Err(CoreError::ShapeMismatch(format!(
                "cannot merge K={} into K={}",
                other.num_classes, self.num_classes
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    fn row_sum(&self, g: usize) -> u64 {
        (0..self.num_classes).map(|p| self.count(g, p)).sum()
    }

    fn col_sum(&self, p: usize) -> u64 {
        (0..self.num_classes).map(|g| self.count(g, p)).sum()
    }

    /// Compute per-class IoU / accuracy and their means.
    ///
    /// Classes absent from both prediction and ground truth (zero union)
    /// are excluded from the means rather than scored 0 or 1. Accuracy is
    /// per-class recall: diagonal over ground-truth row sum.
    pub fn report(&self) -> Result<MetricsReport> {
        let total = self.total();
        if total == 0 {
            return Err(CoreError::InvalidConfig(String::from(
                "cannot report on an empty confusion matrix",
            )));
        }
        let mut iou_per_class = BTreeMap::new();
        let mut acc_per_class = BTreeMap::new();
        for c in 0..self.num_classes {
            let tp = self.count(c, c);
            let union = self.row_sum(c) + self.col_sum(c) - tp;
            if union > 0 {
                iou_per_class.insert(c, tp as f64 / union as f64);
            }
            let gt_pixels = self.row_sum(c);
            if gt_pixels > 0 {
                acc_per_class.insert(c, tp as f64 / gt_pixels as f64);
            }
        }
        let mean = |m: &BTreeMap<usize, f64>| {
            if m.is_empty() {
                0.0
            } else {
                m.values().sum::<f64>() / m.len() as f64
            }
        };
        Ok(MetricsReport {
            miou: mean(&iou_per_class),
            macc: mean(&acc_per_class),
            iou_per_class,
            acc_per_class,
            pixel_count: total,
        })
    }
}

/// One evaluation pass, serializable for the report CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub iou_per_class: BTreeMap<usize, f64>,
    pub acc_per_class: BTreeMap<usize, f64>,
    pub miou: f64,
    pub macc: f64,
    pub pixel_count: u64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    /// Independent oracle: per-class |intersection| / |union| by direct
    /// pixel enumeration, no confusion matrix involved.
    fn brute_force_iou(pred: &[u8], gt: &[u8], k: usize) -> BTreeMap<usize, f64> {
        let mut out = BTreeMap::new();
        for c in 0..k {
            let mut inter = 0u64;
            let mut union = 0u64;
            for (&p, &g) in pred.iter().zip(gt) {
                let in_p = p as usize == c;
                let in_g = g as usize == c;
                if in_p && in_g {
                    inter += 1;
                }
                if in_p || in_g {
                    union += 1;
                }
            }
            if union > 0 {
                out.insert(c, inter as f64 / union as f64);
            }
        }
        out
    }

    #[test]
    fn perfect_prediction_scores_one() {
        let gt = [0u8, 1, 2, 1, 0, 2];
        let mut cm = ConfusionMatrix::new(3);
        cm.accumulate(&gt, &gt).unwrap();
        let r = cm.report().unwrap();
        assert_eq!(r.miou, 1.0);
        assert_eq!(r.macc, 1.0);
        for v in r.iou_per_class.values() {
            assert_eq!(*v, 1.0);
        }
    }

    #[test]
    fn hand_enumerated_two_by_two() {
        // pred=[[0,1],[1,1]], gt=[[0,1],[0,1]]
        let pred = [0u8, 1, 1, 1];
        let gt = [0u8, 1, 0, 1];
        let mut cm = ConfusionMatrix::new(2);
        cm.accumulate(&pred, &gt).unwrap();
        assert_eq!(cm.count(0, 0), 1);
        assert_eq!(cm.count(0, 1), 1);
        assert_eq!(cm.count(1, 1), 2);
        assert_eq!(cm.count(1, 0), 0);
        let r = cm.report().unwrap();
        assert!((r.iou_per_class[&1] - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.acc_per_class[&1], 1.0);
        assert_eq!(r.iou_per_class[&0], 0.5);
    }

    #[test]
    fn accumulation_is_associative() {
        let pred = [0u8, 1, 2, 2, 1, 0, 1, 2];
        let gt = [0u8, 2, 2, 1, 1, 0, 0, 2];
        let mut whole = ConfusionMatrix::new(3);
        whole.accumulate(&pred, &gt).unwrap();
        let mut halves = ConfusionMatrix::new(3);
        halves.accumulate(&pred[..4], &gt[..4]).unwrap();
        halves.accumulate(&pred[4..], &gt[4..]).unwrap();
        assert_eq!(whole, halves);

        let mut merged = ConfusionMatrix::new(3);
        let mut part = ConfusionMatrix::new(3);
        part.accumulate(&pred[..4], &gt[..4]).unwrap();
        merged.merge(&part).unwrap();
        let mut part2 = ConfusionMatrix::new(3);
        part2.accumulate(&pred[4..], &gt[4..]).unwrap();
        merged.merge(&part2).unwrap();
        assert_eq!(whole, merged);
    }

    #[test]
    fn published_miou_arithmetic() {
        // mean of per-class IoUs {96.49, 78.44, 73.98, 66.59}%
        let ious = [96.49, 78.44, 73.98, 66.59];
        let miou = ious.iter().sum::<f64>() / ious.len() as f64;
        assert!((miou - 78.875).abs() < 1e-9);
    }

    #[test]
    fn matches_brute_force_oracle_on_random_masks() {
        let k = 4;
        let mut rng = Rng::from_seed(2024);
        for _ in 0..50 {
            let pred: Vec<u8> = (0..64).map(|_| rng.below(k) as u8).collect();
            let gt: Vec<u8> = (0..64).map(|_| rng.below(k) as u8).collect();
            let mut cm = ConfusionMatrix::new(k);
            cm.accumulate(&pred, &gt).unwrap();
            let r = cm.report().unwrap();
            let oracle = brute_force_iou(&pred, &gt, k);
            assert_eq!(r.iou_per_class.len(), oracle.len());
            for (c, &iou) in &oracle {
                // Both sides are ratios of small integers; require exact equality.
                assert_eq!(r.iou_per_class[c], iou, "class {c}");
            }
        }
    }

    #[test]
    fn label_permutation_permutes_metrics() {
        let perm = [2u8, 0, 1, 3];
        let mut rng = Rng::from_seed(7);
        let pred: Vec<u8> = (0..100).map(|_| rng.below(4) as u8).collect();
        let gt: Vec<u8> = (0..100).map(|_| rng.below(4) as u8).collect();
        let mut cm = ConfusionMatrix::new(4);
        cm.accumulate(&pred, &gt).unwrap();
        let r = cm.report().unwrap();

        let pp: Vec<u8> = pred.iter().map(|&v| perm[v as usize]).collect();
        let pg: Vec<u8> = gt.iter().map(|&v| perm[v as usize]).collect();
        let mut cm2 = ConfusionMatrix::new(4);
        cm2.accumulate(&pp, &pg).unwrap();
        let r2 = cm2.report().unwrap();

        assert!((r.miou - r2.miou).abs() < 1e-12);
        for (c, &v) in &r.iou_per_class {
            assert!((r2.iou_per_class[&(perm[*c] as usize)] - v).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_out_of_range_and_mismatch() {
        let mut cm = ConfusionMatrix::new(2);
        assert!(matches!(
            cm.accumulate(&[0, 2], &[0, 0]),
            Err(CoreError::ClassOutOfRange { .. })
        ));
        assert!(matches!(
            cm.accumulate(&[0], &[0, 0]),
            Err(CoreError::ShapeMismatch(_))
        ));
        assert!(ConfusionMatrix::new(2).report().is_err());
    }
}
