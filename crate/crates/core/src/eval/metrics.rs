use serde::{Deserialize, Serialize};

use crate::data::Mask;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn between(pred: &Mask, gt: &Mask) -> Result<Self> {
        if (pred.width(), pred.height()) != (gt.width(), gt.height()) {
            return Err(Error::ShapeMismatch {
                op: "seg_metrics",
                lhs: vec![pred.height(), pred.width()],
                rhs: vec![gt.height(), gt.width()],
            });
        }
        let mut c = Self::default();
        for (&p, &g) in pred.data().iter().zip(gt.data()) {
            match (p != 0, g != 0) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// Overlap scores of one prediction. Two empty masks score 1 for Dice and
/// IoU; a 0/0 sensitivity or specificity is reported as 1 and flagged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegMetrics {
    pub acc: f64,
    pub dice: f64,
    pub iou: f64,
    pub sen: f64,
    pub spe: f64,
    pub sen_undefined: bool,
    pub spe_undefined: bool,
    pub counts: ConfusionCounts,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (1.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

impl SegMetrics {
    pub fn from_counts(c: ConfusionCounts) -> Self {
        let (dice, _) = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_);
        let (iou, _) = ratio(c.tp, c.tp + c.fp + c.fn_);
        let (acc, _) = ratio(c.tp + c.tn, c.total());
        let (sen, sen_undefined) = ratio(c.tp, c.tp + c.fn_);
        let (spe, spe_undefined) = ratio(c.tn, c.tn + c.fp);
        Self {
            acc,
            dice,
            iou,
            sen,
            spe,
            sen_undefined,
            spe_undefined,
            counts: c,
        }
    }

    /// Values in the reporting order ACC, DIC, IoU, SEN, SPE.
    pub fn values(&self) -> [f64; 5] {
        [self.acc, self.dice, self.iou, self.sen, self.spe]
    }
}

pub const METRIC_NAMES: [&str; 5] = ["ACC", "DIC", "IoU", "SEN", "SPE"];

pub fn seg_metrics(pred: &Mask, gt: &Mask) -> Result<SegMetrics> {
    Ok(SegMetrics::from_counts(ConfusionCounts::between(pred, gt)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxplotSummary {
    /// Lower whisker end: smallest value inside the lower fence.
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    /// Upper whisker end: largest value inside the upper fence.
    pub max: f64,
    pub outliers: Vec<f64>,
}

/// Quantile by linear interpolation between order statistics at `p·(n-1)`.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn boxplot_summary(values: &[f64]) -> Result<BoxplotSummary> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("boxplot of an empty list".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("boxplot of non-finite values".into()));
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let (q1, median, q3) = (quantile(&s, 0.25), quantile(&s, 0.5), quantile(&s, 0.75));
    let iqr = q3 - q1;
    let (lo, hi) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside: Vec<f64> = s.iter().copied().filter(|v| (lo..=hi).contains(v)).collect();
    Ok(BoxplotSummary {
        min: inside.first().copied().unwrap_or(q1).min(q1),
        q1,
        median,
        q3,
        max: inside.last().copied().unwrap_or(q3).max(q3),
        outliers: s.iter().copied().filter(|v| !(lo..=hi).contains(v)).collect(),
    })
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

pub fn mean_std(values: &[f64]) -> MeanStd {
    let n = values.len().max(1) as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    MeanStd { mean, std: var.sqrt() }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_counted_example() {
        // tp at (0,0),(1,0); fp at (2,0); fn at (3,0); twelve true negatives.
        let pred = Mask::from_fn(4, 4, |x, y| y == 0 && x < 3);
        let gt = Mask::from_fn(4, 4, |x, y| y == 0 && (x < 2 || x == 3));
        let m = seg_metrics(&pred, &gt).unwrap();
        assert_eq!(
            m.counts,
            ConfusionCounts {
                tp: 2,
                fp: 1,
                fn_: 1,
                tn: 12
            }
        );
        assert!((m.dice - 4.0 / 6.0).abs() < 1e-15);
        assert_eq!(m.iou, 0.5);
        assert_eq!(m.acc, 0.875);
    }

    #[test]
    fn identical_and_disjoint() {
        let a = Mask::from_fn(8, 8, |x, _| x < 3);
        let b = Mask::from_fn(8, 8, |x, _| x > 5);
        assert_eq!(seg_metrics(&a, &a).unwrap().values(), [1.0; 5]);
        let d = seg_metrics(&a, &b).unwrap();
        assert_eq!((d.dice, d.iou), (0.0, 0.0));
    }

    #[test]
    fn empty_pair_conventions() {
        let z = Mask::zeros(4, 4);
        let m = seg_metrics(&z, &z).unwrap();
        assert_eq!((m.dice, m.iou, m.sen), (1.0, 1.0, 1.0));
        assert!(m.sen_undefined && !m.spe_undefined);
        assert!(seg_metrics(&z, &Mask::zeros(4, 5)).is_err());
    }

    #[test]
    fn quartiles_and_outliers() {
        let b = boxplot_summary(&(1..=9).map(f64::from).collect::<Vec<_>>()).unwrap();
        assert_eq!((b.q1, b.median, b.q3), (3.0, 5.0, 7.0));
        assert!(b.outliers.is_empty());
        let b = boxplot_summary(&[1.0, 2.0, 3.0, 4.0, 100.0]).unwrap();
        assert_eq!(b.outliers, vec![100.0]);
        assert_eq!(b.max, 4.0);
        let c = boxplot_summary(&[0.7; 4]).unwrap();
        assert_eq!((c.min, c.q1, c.median, c.q3, c.max), (0.7, 0.7, 0.7, 0.7, 0.7));
        assert!(boxplot_summary(&[]).is_err());
    }

    #[test]
    fn population_std() {
        let s = mean_std(&[1.0, 3.0]);
        assert_eq!((s.mean, s.std), (2.0, 1.0));
    }
}
