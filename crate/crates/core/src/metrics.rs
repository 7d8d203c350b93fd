//! Node-window classification and regression metrics.

use serde::{Deserialize, Serialize};

use crate::{EagleError, Result};

fn check_lengths(scores: usize, labels: usize) -> Result<()> {
    if scores != labels {
        return Err(EagleError::UndefinedMetric(format!("{scores} scores for {labels} labels")));
    }
    if scores == 0 {
        return Err(EagleError::UndefinedMetric("no predictions".into()));
    }
    Ok(())
}

/// Area under the ROC curve via the Mann-Whitney rank statistic, with
/// midranks for tied scores.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(scores.len(), labels.len())?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(EagleError::UndefinedMetric("NaN score".into()));
    }
    let n_pos = labels.iter().filter(|&&y| y).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EagleError::UndefinedMetric("AUC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1 ..= j+1 share their mean.
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        let tied_pos = order[i..=j].iter().filter(|&&k| labels[k]).count();
        pos_rank_sum += midrank * tied_pos as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((pos_rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn at(scores: &[f64], labels: &[bool], threshold: f64) -> Self {
        let mut c = Confusion::default();
        for (&s, &y) in scores.iter().zip(labels) {
            match (s >= threshold, y) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    /// Mean of the positive-class and negative-class F1.
    pub fn macro_f1(&self) -> f64 {
        let f1 = |tp: usize, fp: usize, fn_: usize| {
            let denom = 2 * tp + fp + fn_;
            if tp == 0 || denom == 0 {
                0.0
            } else {
                2.0 * tp as f64 / denom as f64
            }
        };
        (f1(self.tp, self.fp, self.fn_) + f1(self.tn, self.fn_, self.fp)) / 2.0
    }
}

/// Macro-F1 with `score >= threshold` predicted positive.
pub fn macro_f1(scores: &[f64], labels: &[bool], threshold: f64) -> f64 {
    Confusion::at(scores, labels, threshold).macro_f1()
}

/// Candidate thresholds: 0, every midpoint between adjacent distinct
/// scores, and 1, ascending.
pub fn threshold_candidates(scores: &[f64]) -> Vec<f64> {
    let mut s: Vec<f64> = scores.to_vec();
    s.sort_by(f64::total_cmp);
    s.dedup();
    let mut out = Vec::with_capacity(s.len() + 1);
    out.push(0.0);
    out.extend(s.windows(2).map(|w| w[0] + (w[1] - w[0]) / 2.0));
    out.push(1.0);
    out.sort_by(f64::total_cmp);
    out.dedup();
    out
}

/// Threshold maximizing validation macro-F1 over [`threshold_candidates`];
/// ties go to the smallest threshold.
pub fn calibrate_threshold(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(scores.len(), labels.len())?;
    let n_pos = labels.iter().filter(|&&y| y).count();
    if n_pos == 0 || n_pos == labels.len() {
        return Err(EagleError::Calibration("validation labels contain a single class".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(EagleError::Calibration("NaN validation score".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let n_neg = labels.len() - n_pos;
    // Sweep ascending thresholds; `below` items are predicted negative.
    let mut below = 0usize;
    let (mut neg_below, mut pos_below) = (0usize, 0usize);
    let mut best = (f64::NEG_INFINITY, 0.0);
    for theta in threshold_candidates(scores) {
        while below < order.len() && scores[order[below]] < theta {
            if labels[order[below]] {
                pos_below += 1;
            } else {
                neg_below += 1;
            }
            below += 1;
        }
        let c = Confusion {
            tp: n_pos - pos_below,
            fp: n_neg - neg_below,
            tn: neg_below,
            fn_: pos_below,
        };
        let f = c.macro_f1();
        if f > best.0 {
            best = (f, theta);
        }
    }
    Ok(best.1)
}

/// Mean absolute error; an absent prediction counts as predicting zero.
pub fn mae(pred: Option<&[f64]>, target: &[f64]) -> Result<f64> {
    if target.is_empty() {
        return Err(EagleError::UndefinedMetric("no regression targets".into()));
    }
    let total: f64 = match pred {
        Some(p) => {
            check_lengths(p.len(), target.len())?;
            p.iter().zip(target).map(|(a, b)| (a - b).abs()).sum()
        }
        None => target.iter().map(|b| b.abs()).sum(),
    };
    Ok(total / target.len() as f64)
}

pub fn zero_baseline_mae(target: &[f64]) -> Result<f64> {
    mae(None, target)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub f1_macro: f64,
    /// Absent when the split has a single class.
    pub auc: Option<f64>,
    pub mae: f64,
    pub zero_baseline_mae: f64,
    pub threshold: f64,
    pub rows: usize,
    pub positives: usize,
}

pub fn evaluate(scores: &[f64], labels: &[bool], delay: Option<&[f64]>, y_reg: &[f64], threshold: f64) -> Result<EvalMetrics> {
    check_lengths(scores.len(), labels.len())?;
    let auc = match auc(scores, labels) {
        Ok(a) => Some(a),
        Err(EagleError::UndefinedMetric(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(EvalMetrics {
        f1_macro: macro_f1(scores, labels, threshold),
        auc,
        mae: mae(delay, y_reg)?,
        zero_baseline_mae: zero_baseline_mae(y_reg)?,
        threshold,
        rows: scores.len(),
        positives: labels.iter().filter(|&&y| y).count(),
    })
}

/// Mean and sample standard deviation; `std` needs two values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: Option<f64>,
}

pub fn summarize(values: &[f64]) -> Option<Summary> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.len() >= 2).then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    Some(Summary { mean, std })
}
