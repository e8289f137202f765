//! Thresholding and confusion-based scores: overall accuracy, precision,
//! recall, F1 and IoU, micro-averaged over all evaluated pixels.

use std::fs;
use std::ops::{Add, AddAssign};
use std::path::Path;

use footprint_tensor::Element;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// `1` where `value >= threshold` (ties go to foreground).
pub fn binarize<E: Element>(prediction: &[E], threshold: f64) -> Vec<u8> {
    prediction
        .iter()
        .map(|&v| (Element::to_f64(v) >= threshold) as u8)
        .collect()
}

/// Maps a target in {-1, +1} (or a {0, 1} mask) to {0, 1} at threshold 0.
pub fn target_mask<E: Element>(target: &[E]) -> Vec<u8> {
    binarize(target, 0.5 * f64::EPSILON)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    /// Adds the per-pixel outcomes of `pred` against `truth`.
    pub fn accumulate(&mut self, pred: &[u8], truth: &[u8]) -> Result<()> {
        if pred.len() != truth.len() {
            return Err(Error::Shape(format!(
                "prediction has {} pixels, truth has {}",
                pred.len(),
                truth.len()
            )));
        }
        for (&p, &t) in pred.iter().zip(truth) {
            match (p != 0, t != 0) {
                (true, true) => self.tp += 1,
                (false, false) => self.tn += 1,
                (true, false) => self.fp += 1,
                (false, true) => self.fn_ += 1,
            }
        }
        Ok(())
    }

    pub fn from_masks(pred: &[u8], truth: &[u8]) -> Result<Self> {
        let mut c = Self::default();
        c.accumulate(pred, truth)?;
        Ok(c)
    }

    pub fn merge(self, other: Self) -> Self {
        Self {
            tp: self.tp + other.tp,
            tn: self.tn + other.tn,
            fp: self.fp + other.fp,
            fn_: self.fn_ + other.fn_,
        }
    }
}

impl Add for ConfusionCounts {
    type Output = Self;

    fn add(self, rhs: Self) -> Self {
        self.merge(rhs)
    }
}

impl AddAssign for ConfusionCounts {
    fn add_assign(&mut self, rhs: Self) {
        *self = self.merge(rhs);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub overall_accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub iou: f64,
    pub counts: ConfusionCounts,
    /// Set when some ratio was 0/0 and reported as 0.
    pub degenerate: bool,
}

fn ratio(num: u64, den: u64, degenerate: &mut bool) -> f64 {
    if den == 0 {
        *degenerate = true;
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn compute_metrics(counts: ConfusionCounts) -> Result<MetricsReport> {
    if counts.total() == 0 {
        return Err(Error::EmptyEvaluation);
    }
    let c = counts;
    let mut degenerate = false;
    let precision = ratio(c.tp, c.tp + c.fp, &mut degenerate);
    let recall = ratio(c.tp, c.tp + c.fn_, &mut degenerate);
    // F1 = 2 P R / (P + R) = 2 TP / (2 TP + FP + FN), computed from counts so
    // that it stays exact
    let f1 = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_, &mut degenerate);
    let iou = ratio(c.tp, c.tp + c.fp + c.fn_, &mut degenerate);
    Ok(MetricsReport {
        overall_accuracy: (c.tp + c.tn) as f64 / c.total() as f64,
        precision,
        recall,
        f1,
        iou,
        counts,
        degenerate,
    })
}

/// One row of the metrics CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub method: String,
    pub lambda2: String,
    pub depth: String,
    #[serde(rename = "OA")]
    pub oa: String,
    pub precision: String,
    pub recall: String,
    #[serde(rename = "F1")]
    pub f1: String,
    #[serde(rename = "IoU")]
    pub iou: String,
    pub tp: String,
    pub tn: String,
    pub fp: String,
    #[serde(rename = "fn")]
    pub fn_: String,
}

impl MetricsRow {
    /// OA is reported in percent with two decimals, F1 and IoU with four,
    /// the way the comparison table prints them.
    pub fn new(method: &str, lambda2: Option<f64>, depth: usize, r: &MetricsReport) -> Self {
        Self {
            method: method.to_string(),
            lambda2: lambda2.map(|l| format!("{l}")).unwrap_or_default(),
            depth: depth.to_string(),
            oa: format!("{:.2}", 100.0 * r.overall_accuracy),
            precision: format!("{:.4}", r.precision),
            recall: format!("{:.4}", r.recall),
            f1: format!("{:.4}", r.f1),
            iou: format!("{:.4}", r.iou),
            tp: r.counts.tp.to_string(),
            tn: r.counts.tn.to_string(),
            fp: r.counts.fp.to_string(),
            fn_: r.counts.fn_.to_string(),
        }
    }

    /// A row for a run that produced no metrics.
    pub fn failed(method: &str, lambda2: Option<f64>, depth: usize, status: &str) -> Self {
        let s = || status.to_string();
        Self {
            method: method.to_string(),
            lambda2: lambda2.map(|l| format!("{l}")).unwrap_or_default(),
            depth: depth.to_string(),
            oa: s(),
            precision: s(),
            recall: s(),
            f1: s(),
            iou: s(),
            tp: s(),
            tn: s(),
            fp: s(),
            fn_: s(),
        }
    }
}

pub const METRICS_HEADER_COMMENT: &str =
    "# metrics are micro-averaged: confusion counts are summed over all validation pixels";

/// Writes rows after `#`-prefixed comment lines.
pub fn write_metrics_csv(path: &Path, comments: &[&str], rows: &[MetricsRow]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let body = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    let mut out = String::new();
    for c in comments {
        out.push_str(c);
        out.push('\n');
    }
    out.push_str(&String::from_utf8(body).expect("csv output is utf-8"));
    fs::write(path, out)?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn counts(tp: u64, tn: u64, fp: u64, fn_: u64) -> ConfusionCounts {
        ConfusionCounts { tp, tn, fp, fn_ }
    }

    #[test]
    fn binarize_examples() {
        assert_eq!(binarize(&[0.2f32, -0.3, 0.0], 0.0), vec![1, 0, 1]);
        assert_eq!(target_mask(&[1.0f32, -1.0]), vec![1, 0]);
    }

    #[test]
    fn accumulate_examples() {
        let truth = [1u8, 0, 1, 1, 0];
        let c = ConfusionCounts::from_masks(&truth, &truth).unwrap();
        assert_eq!((c.fp, c.fn_), (0, 0));
        let inv: Vec<u8> = truth.iter().map(|t| 1 - t).collect();
        let c = ConfusionCounts::from_masks(&inv, &truth).unwrap();
        assert_eq!((c.tp, c.tn), (0, 0));
        assert!(matches!(ConfusionCounts::from_masks(&[1], &[1, 0]), Err(Error::Shape(_))));
    }

    #[test]
    fn metric_examples() {
        let r = compute_metrics(counts(1, 1, 1, 1)).unwrap();
        assert_eq!(r.overall_accuracy, 0.5);
        assert_eq!(r.f1, 0.5);
        assert!((r.iou - 1.0 / 3.0).abs() < 1e-15);
        assert!(!r.degenerate);

        let r = compute_metrics(counts(5, 3, 0, 0)).unwrap();
        assert_eq!((r.overall_accuracy, r.f1, r.iou), (1.0, 1.0, 1.0));

        let r = compute_metrics(counts(0, 10, 0, 0)).unwrap();
        assert_eq!((r.precision, r.recall, r.f1, r.iou), (0.0, 0.0, 0.0, 0.0));
        assert!(r.degenerate);

        assert!(matches!(compute_metrics(counts(0, 0, 0, 0)), Err(Error::EmptyEvaluation)));
    }

    #[test]
    fn metrics_row_formats_like_the_table() {
        // the best comparison row: 89.06 %, F1 0.6830, IoU 0.5194
        let r = MetricsReport {
            overall_accuracy: 0.89059,
            precision: 0.7,
            recall: 0.66,
            f1: 0.68304,
            iou: 0.51942,
            counts: ConfusionCounts::default(),
            degenerate: false,
        };
        let row = MetricsRow::new("CWGAN_GP", Some(100.0), 5, &r);
        assert_eq!((row.oa.as_str(), row.f1.as_str(), row.iou.as_str()), ("89.06", "0.6830", "0.5194"));
        assert_eq!(row.lambda2, "100");
    }

    #[test]
    fn csv_round_trip_with_comments() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let r = compute_metrics(counts(3, 4, 1, 2)).unwrap();
        let rows = vec![
            MetricsRow::new("U-Net", None, 5, &r),
            MetricsRow::failed("CGAN", Some(1.0), 5, "DIVERGED"),
        ];
        write_metrics_csv(&path, &[METRICS_HEADER_COMMENT], &rows).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.lines().nth(1).unwrap().starts_with("method,lambda2,depth,OA,precision,recall,F1,IoU,tp,tn,fp,fn"));
        assert_eq!(read_metrics_csv(&path).unwrap(), rows);
    }

    fn arb_counts() -> impl Strategy<Value = ConfusionCounts> {
        (0u64..1000, 0u64..1000, 0u64..1000, 0u64..1000).prop_map(|(a, b, c, d)| counts(a, b, c, d))
    }

    proptest! {
        #[test]
        fn merge_is_associative_and_commutative(a in arb_counts(), b in arb_counts(), c in arb_counts()) {
            prop_assert_eq!(a + b, b + a);
            prop_assert_eq!((a + b) + c, a + (b + c));
        }

        #[test]
        fn f1_iou_identity(c in arb_counts()) {
            prop_assume!(c.tp > 0);
            let r = compute_metrics(c).unwrap();
            prop_assert!((r.f1 - 2.0 * r.iou / (1.0 + r.iou)).abs() <= 1e-12);
        }

        #[test]
        fn swapping_roles_swaps_errors(
            pred in prop::collection::vec(0u8..2, 1..64),
            seed in any::<u64>(),
        ) {
            let truth: Vec<u8> = pred.iter().enumerate().map(|(i, _)| ((seed >> (i % 64)) & 1) as u8).collect();
            let a = ConfusionCounts::from_masks(&pred, &truth).unwrap();
            let b = ConfusionCounts::from_masks(&truth, &pred).unwrap();
            prop_assert_eq!((a.fp, a.fn_, a.tp, a.tn), (b.fn_, b.fp, b.tp, b.tn));
            let (ra, rb) = (compute_metrics(a).unwrap(), compute_metrics(b).unwrap());
            prop_assert_eq!(ra.overall_accuracy, rb.overall_accuracy);
            prop_assert_eq!(ra.f1, rb.f1);
        }
    }
}
