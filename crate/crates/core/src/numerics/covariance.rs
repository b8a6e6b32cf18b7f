use serde::{Deserialize, Serialize};

use super::matrix::{norm, Matrix};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Mean and covariance of a sample, with the shrinkage that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceEstimate<T> {
    pub mean: Vec<T>,
    pub covariance: Matrix<T>,
    /// Weight on the scaled-identity target; zero for the plain sample covariance.
    pub shrinkage_intensity: T,
    pub sample_count: usize,
}

/// Column means of `samples`.
pub fn column_mean<T: Scalar>(samples: &Matrix<T>) -> Result<Vec<T>> {
    if samples.is_empty() {
        return Err(Error::NoSamples);
    }
    let n = T::from_count(samples.rows());
    let mut mean = vec![T::zero(); samples.cols()];
    for row in samples.row_iter() {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    Ok(mean)
}

/// Population (1/n) covariance about `mean`.
fn scatter<T: Scalar>(samples: &Matrix<T>, mean: &[T]) -> Matrix<T> {
    let d = samples.cols();
    let mut cov = Matrix::zeros(d, d);
    let mut centered = vec![T::zero(); d];
    for row in samples.row_iter() {
        for ((c, &v), &m) in centered.iter_mut().zip(row).zip(mean) {
            *c = v - m;
        }
        for i in 0..d {
            let ci = centered[i];
            for j in i..d {
                cov[(i, j)] += ci * centered[j];
            }
        }
    }
    let n = T::from_count(samples.rows());
    for i in 0..d {
        for j in i..d {
            let v = cov[(i, j)] / n;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    cov
}

/// Sample mean and population covariance `(1/n) Σ (zᵢ−μ)(zᵢ−μ)ᵀ`.
pub fn sample_mean_cov<T: Scalar>(samples: &Matrix<T>) -> Result<CovarianceEstimate<T>> {
    let mean = column_mean(samples)?;
    let covariance = scatter(samples, &mean);
    Ok(CovarianceEstimate {
        mean,
        covariance,
        shrinkage_intensity: T::zero(),
        sample_count: samples.rows(),
    })
}

/// Ledoit-Wolf shrinkage towards the scaled identity `νI`, `ν = trace(S)/d`.
///
/// Returns `(1−ρ)S + ρνI` with the analytic optimal intensity
/// `ρ = min(b̄², δ²)/δ²` where `δ² = ‖S − νI‖²_F/d` and
/// `b̄² = (1/(n²d)) Σₖ ‖xₖxₖᵀ − S‖²_F` over centered rows `xₖ`.
/// When `S` already equals the target (`δ² = 0`, e.g. a single sample) ρ is 1.
pub fn ledoit_wolf<T: Scalar>(samples: &Matrix<T>) -> Result<CovarianceEstimate<T>> {
    let CovarianceEstimate {
        mean, covariance: s, ..
    } = sample_mean_cov(samples)?;
    let n = T::from_count(samples.rows());
    let d = samples.cols();
    if d == 0 {
        return Ok(CovarianceEstimate {
            mean,
            covariance: s,
            shrinkage_intensity: T::one(),
            sample_count: samples.rows(),
        });
    }
    let df = T::from_count(d);
    let nu = s.trace() / df;

    let s_frob_sq: T = s.as_slice().iter().map(|&v| v * v).sum();
    // ‖S − νI‖² = ‖S‖² − 2ν tr(S) + dν²
    let delta_sq = ((s_frob_sq - T::lit(2.0) * nu * s.trace() + df * nu * nu) / df).max(T::zero());

    // Σₖ ‖xₖxₖᵀ − S‖² = Σₖ ‖xₖ‖⁴ − n‖S‖²
    let fourth: T = samples
        .row_iter()
        .map(|row| {
            let sq: T = row
                .iter()
                .zip(&mean)
                .map(|(&v, &m)| (v - m) * (v - m))
                .sum();
            sq * sq
        })
        .sum();
    let beta_bar_sq = ((fourth / n - s_frob_sq) / (n * df)).max(T::zero());

    let rho = if delta_sq <= T::zero() {
        T::one()
    } else {
        beta_bar_sq.min(delta_sq) / delta_sq
    };

    let mut shrunk = s.scale(T::one() - rho);
    for i in 0..d {
        shrunk[(i, i)] += rho * nu;
    }
    Ok(CovarianceEstimate {
        mean,
        covariance: shrunk,
        shrinkage_intensity: rho,
        sample_count: samples.rows(),
    })
}

/// Rows scaled to unit ℓ2 norm; `zero_rows` lists rows left untouched because their norm was zero.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedRows<T> {
    pub matrix: Matrix<T>,
    pub zero_rows: Vec<usize>,
}

impl<T> NormalizedRows<T> {
    pub fn has_warning(&self) -> bool {
        !self.zero_rows.is_empty()
    }
}

pub fn l2_normalize_rows<T: Scalar>(features: &Matrix<T>) -> NormalizedRows<T> {
    let mut matrix = features.clone();
    let mut zero_rows = Vec::new();
    for i in 0..matrix.rows() {
        let row = matrix.row_mut(i);
        if !normalize_in_place(row) {
            zero_rows.push(i);
        }
    }
    NormalizedRows { matrix, zero_rows }
}

/// Normalizes `v` in place; returns false (leaving it unchanged) when its norm is zero.
pub fn normalize_in_place<T: Scalar>(v: &mut [T]) -> bool {
    let n = norm(v);
    if n == T::zero() {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= n);
    true
}
