//! Detection metrics with outliers (OOD samples) as the positive class.
//!
//! * AUROC by the Mann-Whitney rank statistic, ties credited one half.
//! * AUPR as step-wise average precision over a descending-score sweep.
//! * FPR at the largest threshold that still detects a target fraction of
//!   outliers, with "outlier" meaning score strictly above the threshold.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Scores paired with ground truth (`true` = outlier).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledScores {
    scores: Vec<f64>,
    is_ood: Vec<bool>,
}

impl LabeledScores {
    pub fn new<T: Scalar>(scores: &[T], is_ood: Vec<bool>) -> Result<Self> {
        if scores.len() != is_ood.len() {
            return Err(Error::DimensionMismatch {
                expected: scores.len(),
                actual: is_ood.len(),
            });
        }
        let scores: Vec<f64> = scores.iter().map(|s| s.as_f64()).collect();
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidParameter(format!("score {i} is not finite")));
        }
        Ok(Self { scores, is_ood })
    }

    /// In-distribution scores followed by outlier scores.
    pub fn from_groups<T: Scalar>(in_scores: &[T], ood_scores: &[T]) -> Result<Self> {
        let mut all = Vec::with_capacity(in_scores.len() + ood_scores.len());
        all.extend_from_slice(in_scores);
        all.extend_from_slice(ood_scores);
        let mut labels = vec![false; in_scores.len()];
        labels.resize(all.len(), true);
        Self::new(&all, labels)
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn is_ood(&self) -> &[bool] {
        &self.is_ood
    }

    pub fn n_ood(&self) -> usize {
        self.is_ood.iter().filter(|&&b| b).count()
    }

    pub fn n_in(&self) -> usize {
        self.is_ood.len() - self.n_ood()
    }

    pub fn negated(&self) -> Self {
        Self {
            scores: self.scores.iter().map(|s| -s).collect(),
            is_ood: self.is_ood.clone(),
        }
    }

    fn require_both_classes(&self) -> Result<()> {
        if self.n_ood() == 0 || self.n_in() == 0 {
            return Err(Error::InvalidParameter(
                "need at least one outlier and one in-distribution score".into(),
            ));
        }
        Ok(())
    }

    fn order_ascending(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.scores.len()).collect();
        idx.sort_by(|&a, &b| {
            self.scores[a]
                .partial_cmp(&self.scores[b])
                .unwrap_or(Ordering::Equal)
        });
        idx
    }
}

pub fn auroc(data: &LabeledScores) -> Result<f64> {
    data.require_both_classes()?;
    let idx = data.order_ascending();
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < idx.len() {
        let value = data.scores[idx[start]];
        let mut end = start + 1;
        while end < idx.len() && data.scores[idx[end]] == value {
            end += 1;
        }
        // 1-based ranks start+1..=end share their average
        let avg_rank = (start + 1 + end) as f64 / 2.0;
        let positives = idx[start..end].iter().filter(|&&i| data.is_ood[i]).count();
        rank_sum += avg_rank * positives as f64;
        start = end;
    }
    let n_pos = data.n_ood() as f64;
    let n_neg = data.n_in() as f64;
    let u = rank_sum - n_pos * (n_pos + 1.0) / 2.0;
    Ok(u / (n_pos * n_neg))
}

pub fn aupr(data: &LabeledScores) -> Result<f64> {
    let n_pos = data.n_ood();
    if n_pos == 0 {
        return Err(Error::InvalidParameter("AUPR needs at least one outlier".into()));
    }
    let mut idx = data.order_ascending();
    idx.reverse();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut area = 0.0;
    let mut start = 0;
    while start < idx.len() {
        let value = data.scores[idx[start]];
        let mut end = start;
        while end < idx.len() && data.scores[idx[end]] == value {
            if data.is_ood[idx[end]] {
                tp += 1;
            } else {
                fp += 1;
            }
            end += 1;
        }
        let recall = tp as f64 / n_pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
        start = end;
    }
    Ok(area)
}

/// Operating point chosen by [`fpr_at_tpr_detail`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingPoint {
    /// Samples scoring strictly above this are flagged.
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
}

pub fn fpr_at_tpr(data: &LabeledScores, tpr: f64) -> Result<f64> {
    fpr_at_tpr_detail(data, tpr).map(|p| p.fpr)
}

/// Largest threshold whose outlier detection rate is at least `tpr`, and its false-positive rate.
pub fn fpr_at_tpr_detail(data: &LabeledScores, tpr: f64) -> Result<OperatingPoint> {
    data.require_both_classes()?;
    if !(tpr > 0.0 && tpr <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "target TPR must be in (0, 1], got {tpr}"
        )));
    }
    let n_pos = data.n_ood();
    let n_neg = data.n_in();
    let k = min_count_reaching(tpr, n_pos);

    let mut ood: Vec<f64> = data
        .scores
        .iter()
        .zip(&data.is_ood)
        .filter_map(|(&s, &o)| o.then_some(s))
        .collect();
    ood.sort_by(|a, b| b.partial_cmp(a).unwrap_or(Ordering::Equal));
    let cut = ood[k - 1];

    let threshold = data
        .scores
        .iter()
        .copied()
        .filter(|&s| s < cut)
        .fold(f64::NEG_INFINITY, f64::max);
    let tp = ood.iter().filter(|&&s| s > threshold).count();
    let fp = data
        .scores
        .iter()
        .zip(&data.is_ood)
        .filter(|&(&s, &o)| !o && s > threshold)
        .count();
    Ok(OperatingPoint {
        threshold,
        tpr: tp as f64 / n_pos as f64,
        fpr: fp as f64 / n_neg as f64,
    })
}

/// Smallest `k` in `1..=n` with `k / n >= fraction`.
pub(crate) fn min_count_reaching(fraction: f64, n: usize) -> usize {
    let nf = n as f64;
    let mut k = ((fraction * nf).ceil() as usize).clamp(1, n);
    while k > 1 && (k - 1) as f64 / nf >= fraction {
        k -= 1;
    }
    while k < n && (k as f64 / nf) < fraction {
        k += 1;
    }
    k
}

/// Summary of one detector on one in/out test pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auroc: f64,
    pub aupr: f64,
    pub fpr_at_tpr: f64,
    pub tpr_target: f64,
    pub n_in: usize,
    pub n_ood: usize,
}

impl EvalReport {
    pub const TSV_HEADER: &'static str = "auroc\taupr\tfpr_at_tpr\ttpr_target\tn_in\tn_ood";

    pub fn to_tsv_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}",
            self.auroc, self.aupr, self.fpr_at_tpr, self.tpr_target, self.n_in, self.n_ood
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

pub fn evaluate<T: Scalar>(in_scores: &[T], ood_scores: &[T], tpr: f64) -> Result<EvalReport> {
    let data = LabeledScores::from_groups(in_scores, ood_scores)?;
    Ok(EvalReport {
        auroc: auroc(&data)?,
        aupr: aupr(&data)?,
        fpr_at_tpr: fpr_at_tpr(&data, tpr)?,
        tpr_target: tpr,
        n_in: in_scores.len(),
        n_ood: ood_scores.len(),
    })
}
