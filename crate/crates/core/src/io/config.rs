use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::scalar::Scalar;

/// Parameters shared by the fit / calibrate / few-shot pipelines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub clusters: usize,
    pub tpr: f64,
    pub k: usize,
    pub n_augment: usize,
    pub jitter_scale: f64,
    pub seed: u64,
    /// Fraction of in-distribution rows kept for training; the rest calibrate.
    pub split: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            clusters: 1,
            tpr: 0.95,
            k: 5,
            n_augment: 10,
            jitter_scale: 0.1,
            seed: 0,
            split: 0.9,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.clusters == 0 {
            return bad("clusters must be at least 1".into());
        }
        if !(self.tpr > 0.0 && self.tpr <= 1.0) {
            return bad(format!("tpr must be in (0, 1], got {}", self.tpr));
        }
        if !(self.split > 0.0 && self.split < 1.0) {
            return bad(format!("split must be in (0, 1), got {}", self.split));
        }
        if self.k == 0 || self.n_augment == 0 {
            return bad("k and n_augment must be at least 1".into());
        }
        if !(self.jitter_scale >= 0.0 && self.jitter_scale.is_finite()) {
            return bad(format!("jitter scale must be non-negative, got {}", self.jitter_scale));
        }
        Ok(())
    }
}

/// Seeded shuffle, then the first `⌊split·n⌋` rows (clamped to `1..=n−1`)
/// train and the rest calibrate.
pub fn partition<T: Scalar>(features: &Matrix<T>, split: f64, seed: u64) -> Result<(Matrix<T>, Matrix<T>)> {
    let n = features.rows();
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "partition needs at least 2 rows, got {n}"
        )));
    }
    if !(split > 0.0 && split < 1.0) {
        return Err(Error::InvalidParameter(format!("split must be in (0, 1), got {split}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = ((split * n as f64).floor() as usize).clamp(1, n - 1);
    Ok((
        features.select_rows(&order[..cut]),
        features.select_rows(&order[cut..]),
    ))
}

/// `k` rows drawn without replacement by a seeded shuffle.
pub fn select_rows<T: Scalar>(features: &Matrix<T>, k: usize, seed: u64) -> Result<Matrix<T>> {
    let n = features.rows();
    if k == 0 || k > n {
        return Err(Error::InvalidParameter(format!("cannot choose {k} of {n} rows")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(features.select_rows(&order[..k]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn column(n: usize) -> Matrix<f64> {
        Matrix::from_vec(n, 1, (0..n).map(|i| i as f64).collect()).unwrap()
    }

    #[test]
    fn sizes() {
        let (a, b) = partition(&column(10), 0.8, 1).unwrap();
        assert_eq!((a.rows(), b.rows()), (8, 2));
        let (a, b) = partition(&column(3), 0.1, 1).unwrap();
        assert_eq!((a.rows(), b.rows()), (1, 2));
        let (a, b) = partition(&column(3), 0.99, 1).unwrap();
        assert_eq!((a.rows(), b.rows()), (2, 1));
    }

    #[test]
    fn deterministic_and_complete() {
        let x = column(50);
        let first = partition(&x, 0.7, 3).unwrap();
        assert_eq!(first, partition(&x, 0.7, 3).unwrap());
        let mut all: Vec<f64> = first.0.as_slice().iter().chain(first.1.as_slice()).copied().collect();
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(all, x.into_vec());
    }

    #[test]
    fn errors() {
        assert!(partition(&column(1), 0.5, 0).is_err());
        assert!(partition(&column(4), 1.0, 0).is_err());
        assert!(partition(&column(4), 0.0, 0).is_err());
    }

    #[test]
    fn subset_selection() {
        let x = column(10);
        let s = select_rows(&x, 3, 4).unwrap();
        assert_eq!(s.rows(), 3);
        assert_eq!(s, select_rows(&x, 3, 4).unwrap());
        let mut v = s.into_vec();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v.dedup();
        assert_eq!(v.len(), 3);
        assert!(select_rows(&x, 11, 0).is_err());
        assert!(select_rows(&x, 0, 0).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(RunConfig::default().validate().is_ok());
        for cfg in [
            RunConfig { clusters: 0, ..Default::default() },
            RunConfig { tpr: 0.0, ..Default::default() },
            RunConfig { split: 1.0, ..Default::default() },
            RunConfig { n_augment: 0, ..Default::default() },
            RunConfig { jitter_scale: -1.0, ..Default::default() },
        ] {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }
}
