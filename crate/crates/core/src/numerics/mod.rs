//! Dense linear algebra and covariance estimation.
//!
//! Everything here is a pure function of its inputs. Covariances use the
//! population (1/n) normalization so a single sample yields the zero matrix.

mod covariance;
mod decomp;
mod matrix;

pub use covariance::{
    column_mean, l2_normalize_rows, ledoit_wolf, normalize_in_place, sample_mean_cov,
    CovarianceEstimate, NormalizedRows,
};
pub use decomp::{
    cholesky, eig_sym, mahalanobis_sq, regularize_spd, regularize_with_ridge, solve_spd,
    SymmetricEigen,
};
pub use matrix::{dot, norm, squared_distance, Matrix};
