//! Confusion-matrix metrics and precision-recall scoring.
//!
//! Ratios whose denominator is zero are `None` (reported as `NA` in CSV and
//! `null` in JSON) rather than a silent zero.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("{labels} labels but {scores} scores")]
    LengthMismatch { labels: usize, scores: usize },
    #[error("no positive labels; the precision-recall curve is undefined")]
    NoPositives,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

fn check(y: &[u8], p: &[f64]) -> Result<(), EvalError> {
    if y.len() != p.len() {
        return Err(EvalError::LengthMismatch { labels: y.len(), scores: p.len() });
    }
    Ok(())
}

/// Predicted positive iff `p >= threshold`.
pub fn confusion(y: &[u8], p: &[f64], threshold: f64) -> Result<ConfusionCounts, EvalError> {
    check(y, p)?;
    let mut c = ConfusionCounts::default();
    for (&label, &score) in y.iter().zip(p) {
        match (label == 1, score >= threshold) {
            (true, true) => c.tp += 1,
            (false, true) => c.fp += 1,
            (true, false) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// `1 - FP/(FP+TN)`.
pub fn inverted_far(c: &ConfusionCounts) -> Option<f64> {
    ratio(c.fp, c.fp + c.tn).map(|r| 1.0 - r)
}

/// Recall on the crash class, `TP/(TP+FN)`.
pub fn hit_rate(c: &ConfusionCounts) -> Option<f64> {
    ratio(c.tp, c.tp + c.fn_)
}

pub fn balanced_accuracy(c: &ConfusionCounts) -> Option<f64> {
    let tpr = ratio(c.tp, c.tp + c.fn_)?;
    let tnr = ratio(c.tn, c.tn + c.fp)?;
    Some(0.5 * (tpr + tnr))
}

/// `(recall, precision)` points, one per distinct score in descending order.
pub fn pr_curve(y: &[u8], p: &[f64]) -> Result<Vec<(f64, f64)>, EvalError> {
    check(y, p)?;
    let positives = y.iter().filter(|&&l| l == 1).count();
    if positives == 0 {
        return Err(EvalError::NoPositives);
    }
    let mut order: Vec<usize> = (0..y.len()).collect();
    order.sort_by(|&a, &b| p[b].total_cmp(&p[a]));
    let mut points = Vec::new();
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let score = p[order[i]];
        while i < order.len() && p[order[i]] == score {
            tp += usize::from(y[order[i]] == 1);
            seen += 1;
            i += 1;
        }
        points.push((tp as f64 / positives as f64, tp as f64 / seen as f64));
    }
    Ok(points)
}

/// Average precision: `sum_k (R_k - R_{k-1}) * P_k`.
pub fn auc_prc(y: &[u8], p: &[f64]) -> Result<f64, EvalError> {
    let curve = pr_curve(y, p)?;
    let mut prev = 0.0;
    let mut area = 0.0;
    for (r, pr) in curve {
        area += (r - prev) * pr;
        prev = r;
    }
    Ok(area)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ifar: Option<f64>,
    pub hit_rate: Option<f64>,
    pub bal_acc: Option<f64>,
    pub auc_prc: Option<f64>,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    pub threshold: f64,
}

pub const REPORT_FIELDS: [&str; 9] = ["ifar", "hit_rate", "bal_acc", "auc_prc", "tp", "fp", "fn", "tn", "threshold"];

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

impl MetricsReport {
    pub fn counts(&self) -> ConfusionCounts {
        ConfusionCounts { tp: self.tp, fp: self.fp, fn_: self.fn_, tn: self.tn }
    }

    /// Values in `REPORT_FIELDS` order.
    pub fn csv_fields(&self) -> Vec<String> {
        vec![
            fmt_opt(self.ifar),
            fmt_opt(self.hit_rate),
            fmt_opt(self.bal_acc),
            fmt_opt(self.auc_prc),
            self.tp.to_string(),
            self.fp.to_string(),
            self.fn_.to_string(),
            self.tn.to_string(),
            self.threshold.to_string(),
        ]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

pub fn evaluate(y: &[u8], p: &[f64], threshold: f64) -> Result<MetricsReport, EvalError> {
    let c = confusion(y, p, threshold)?;
    let auc = match auc_prc(y, p) {
        Ok(a) => Some(a),
        Err(EvalError::NoPositives) => None,
        Err(e) => return Err(e),
    };
    Ok(MetricsReport {
        ifar: inverted_far(&c),
        hit_rate: hit_rate(&c),
        bal_acc: balanced_accuracy(&c),
        auc_prc: auc,
        tp: c.tp,
        fp: c.fp,
        fn_: c.fn_,
        tn: c.tn,
        threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_tally() {
        let c = confusion(&[1, 0, 1, 0], &[0.9, 0.8, 0.2, 0.1], 0.5).unwrap();
        assert_eq!(c, ConfusionCounts { tp: 1, fp: 1, fn_: 1, tn: 1 });
        let all = confusion(&[1, 0, 1], &[0.0, 0.3, 0.9], 0.0).unwrap();
        assert_eq!((all.tn, all.fn_), (0, 0));
        assert!(confusion(&[1], &[], 0.5).is_err());
    }

    #[test]
    fn ratio_arithmetic() {
        let c = ConfusionCounts { tp: 0, fp: 1, fn_: 0, tn: 3 };
        assert_eq!(inverted_far(&c), Some(0.75));
        assert_eq!(hit_rate(&c), None);
        assert_eq!(hit_rate(&ConfusionCounts { tp: 2, fp: 0, fn_: 6, tn: 0 }), Some(0.25));
        assert_eq!(hit_rate(&ConfusionCounts { tp: 0, fp: 0, fn_: 4, tn: 1 }), Some(0.0));
        let b = balanced_accuracy(&ConfusionCounts { tp: 1, fp: 1, fn_: 3, tn: 9 }).unwrap();
        assert!((b - 0.575).abs() < 1e-15);
        assert_eq!(balanced_accuracy(&ConfusionCounts { tp: 0, fp: 0, fn_: 5, tn: 95 }), Some(0.5));
    }

    #[test]
    fn average_precision_cases() {
        assert_eq!(auc_prc(&[1, 1, 0, 0], &[0.9, 0.8, 0.3, 0.1]).unwrap(), 1.0);
        assert_eq!(auc_prc(&[1, 0], &[0.2, 0.8]).unwrap(), 0.5);
        assert_eq!(auc_prc(&[1, 0, 0, 0], &[0.5; 4]).unwrap(), 0.25);
        assert_eq!(auc_prc(&[0, 0], &[0.5, 0.4]), Err(EvalError::NoPositives));
    }

    #[test]
    fn report_serialization() {
        let r = evaluate(&[0, 0], &[0.1, 0.7], 0.5).unwrap();
        assert_eq!(r.csv_fields()[1], "NA");
        assert_eq!(
            r.to_json(),
            r#"{"ifar":0.5,"hit_rate":null,"bal_acc":null,"auc_prc":null,"tp":0,"fp":1,"fn":0,"tn":1,"threshold":0.5}"#
        );
    }
}
