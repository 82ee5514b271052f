//! Binary classification metrics and the one-tailed paired t-test.
//!
//! The positive class is "metaphor" (label 1). Zero denominators give 0 for
//! precision, recall and F1.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::special::student_t_upper_tail;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

pub fn confusion(predictions: &[u8], golds: &[u8]) -> Result<ConfusionCounts> {
    if predictions.len() != golds.len() {
        return Err(Error::contract(
            "confusion",
            format!("{} predictions vs {} golds", predictions.len(), golds.len()),
        ));
    }
    if predictions.is_empty() {
        return Err(Error::degenerate("confusion", "no predictions"));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &g) in predictions.iter().zip(golds) {
        match (p != 0, g != 0) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    /// Per-instance probabilities, empty for aggregated reports.
    pub probabilities: Vec<f64>,
    pub golds: Vec<u8>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn prf_accuracy(c: &ConfusionCounts) -> MetricsReport {
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    MetricsReport {
        precision,
        recall,
        f1,
        accuracy: ratio(c.tp + c.tn, c.total()),
        probabilities: Vec::new(),
        golds: Vec::new(),
    }
}

/// Thresholds at 0.5 and scores against `golds`, keeping the raw values.
pub fn evaluate_probabilities(probabilities: &[f64], golds: &[u8]) -> Result<MetricsReport> {
    let preds: Vec<u8> = probabilities.iter().map(|&p| crate::model::classify(p)).collect();
    let c = confusion(&preds, golds)?;
    Ok(MetricsReport {
        probabilities: probabilities.to_vec(),
        golds: golds.to_vec(),
        ..prf_accuracy(&c)
    })
}

impl MetricsReport {
    pub fn predictions(&self) -> Vec<u8> {
        self.probabilities.iter().map(|&p| crate::model::classify(p)).collect()
    }

    /// 1.0 where the thresholded prediction matches the gold label.
    pub fn correctness(&self) -> Vec<f64> {
        self.predictions()
            .iter()
            .zip(&self.golds)
            .map(|(p, g)| if p == g { 1.0 } else { 0.0 })
            .collect()
    }
}

/// Metric-wise arithmetic mean over runs.
pub fn aggregate_runs(reports: &[MetricsReport]) -> Result<MetricsReport> {
    match reports {
        [] => Err(Error::contract("aggregate_runs", "no reports")),
        [one] => Ok(one.clone()),
        many => {
            let n = many.len() as f64;
            let mean = |f: fn(&MetricsReport) -> f64| many.iter().map(f).sum::<f64>() / n;
            Ok(MetricsReport {
                precision: mean(|r| r.precision),
                recall: mean(|r| r.recall),
                f1: mean(|r| r.f1),
                accuracy: mean(|r| r.accuracy),
                probabilities: Vec::new(),
                golds: Vec::new(),
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTestResult {
    pub t_statistic: f64,
    pub degrees_of_freedom: usize,
    /// P(T ≥ t) under H0, i.e. evidence that `a` exceeds `b`.
    pub p_value_one_tailed: f64,
}

/// One-tailed paired t-test of `mean(a − b) > 0`.
///
/// With zero variance of the differences, `t` is ±∞ (p = 0 or 1) by the
/// sign of the mean, or 0 (p = 0.5) when every difference is zero.
pub fn paired_ttest_one_tailed(a: &[f64], b: &[f64]) -> Result<TTestResult> {
    if a.len() != b.len() {
        return Err(Error::contract(
            "paired_ttest",
            format!("unpaired samples: {} vs {}", a.len(), b.len()),
        ));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::contract("paired_ttest", "need at least two pairs"));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let nf = n as f64;
    let mean = diffs.iter().sum::<f64>() / nf;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (nf - 1.0);
    let df = n - 1;
    let t = if var == 0.0 {
        if mean > 0.0 {
            f64::INFINITY
        } else if mean < 0.0 {
            f64::NEG_INFINITY
        } else {
            0.0
        }
    } else {
        mean / (libm::sqrt(var) / libm::sqrt(nf))
    };
    if t.is_nan() {
        return Err(Error::NonFinite {
            what: "t statistic".into(),
        });
    }
    Ok(TTestResult {
        t_statistic: t,
        degrees_of_freedom: df,
        p_value_one_tailed: student_t_upper_tail(t, df as f64),
    })
}
