use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::min_count_reaching;
use crate::scalar::Scalar;

/// Score threshold chosen on held-out in-distribution data.
///
/// Scores strictly above `threshold` are outliers; at least `target_tpr` of
/// the calibration scores are at or below it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub threshold: f64,
    pub target_tpr: f64,
    pub cal_count: usize,
}

impl Calibration {
    pub fn is_outlier<T: Scalar>(&self, score: T) -> bool {
        score.as_f64() > self.threshold
    }
}

/// Threshold at the `⌈T·n⌉`-th smallest calibration score.
pub fn calibrate<T: Scalar>(cal_scores: &[T], target_tpr: f64) -> Result<Calibration> {
    if cal_scores.is_empty() {
        return Err(Error::NoSamples);
    }
    if !(target_tpr > 0.0 && target_tpr <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "target TPR must be in (0, 1], got {target_tpr}"
        )));
    }
    let mut sorted: Vec<f64> = cal_scores.iter().map(|s| s.as_f64()).collect();
    if sorted.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidParameter("calibration scores must be finite".into()));
    }
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let k = min_count_reaching(target_tpr, sorted.len());
    Ok(Calibration {
        threshold: sorted[k - 1],
        target_tpr,
        cal_count: sorted.len(),
    })
}

/// `true` where the score is strictly above the calibrated threshold.
pub fn classify<T: Scalar>(scores: &[T], cal: &Calibration) -> Vec<bool> {
    scores.iter().map(|&s| cal.is_outlier(s)).collect()
}
