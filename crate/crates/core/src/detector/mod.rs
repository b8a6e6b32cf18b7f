//! Cluster-conditioned Mahalanobis outlier scoring.
//!
//! A [`DetectorModel`] holds one Gaussian per k-means cluster of the
//! (optionally ℓ2-normalized) training features. The outlier score of `z` is
//! `min_m (z − μ_m)ᵀ Σ_m⁻¹ (z − μ_m)`, evaluated through the Cholesky factor
//! of the regularized cluster covariance. [`FewShotModel`] subtracts the
//! distance to a shrunk Gaussian fitted on a handful of known outliers.

mod calibration;
mod eigen_report;
mod fewshot;
mod persist;

pub use calibration::{calibrate, classify, Calibration};
pub use eigen_report::{eigen_discrimination_report, ComponentDiscrimination, EigenReport};
pub use fewshot::{
    augment_shots, fewshot_fit, fewshot_fit_with, ssd_k_score, ssd_k_score_batch, FewShotConfig,
    FewShotModel,
};
pub use persist::{ModelFile, FEWSHOT_SCHEMA, MODEL_SCHEMA};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clustering::kmeans_fit;
use crate::error::{Error, Result};
use crate::numerics::{
    cholesky, eig_sym, l2_normalize_rows, mahalanobis_sq, normalize_in_place,
    regularize_with_ridge, sample_mean_cov, squared_distance, Matrix, SymmetricEigen,
};
use crate::scalar::Scalar;

/// Gaussian summary of one cluster.
///
/// `chol` and `eigen` both describe the regularized covariance actually used
/// for scoring, so the Cholesky and eigenbasis routes agree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterGaussian<T> {
    pub mean: Vec<T>,
    pub chol: Matrix<T>,
    pub eigen: SymmetricEigen<T>,
    /// Fraction of training rows in this cluster.
    pub weight: T,
    /// Ridge added to the sample covariance before factoring (zero if none).
    pub ridge: T,
}

impl<T: Scalar> ClusterGaussian<T> {
    pub fn from_moments(mean: Vec<T>, covariance: &Matrix<T>, weight: T) -> Result<Self> {
        if covariance.rows() != mean.len() || !covariance.is_square() {
            return Err(Error::DimensionMismatch {
                expected: mean.len(),
                actual: covariance.rows(),
            });
        }
        let (regularized, ridge) = regularize_with_ridge(covariance)?;
        let chol = cholesky(&regularized)?;
        let eigen = eig_sym(&regularized)?;
        Ok(Self {
            mean,
            chol,
            eigen,
            weight,
            ridge,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `L Lᵀ`, the covariance used for scoring.
    pub fn covariance(&self) -> Matrix<T> {
        self.chol
            .matmul(&self.chol.transpose())
            .expect("square factor")
    }

    /// `(z − μ)ᵀ Σ⁻¹ (z − μ)` via the Cholesky factor.
    pub fn mahalanobis(&self, z: &[T]) -> Result<T> {
        let diff = self.centered(z)?;
        mahalanobis_sq(&self.chol, &diff)
    }

    /// The same quadratic form in the eigenbasis: `Σⱼ (qⱼᵀ(z − μ))² / λⱼ`.
    pub fn mahalanobis_eigen(&self, z: &[T]) -> Result<T> {
        let diff = self.centered(z)?;
        Ok(self
            .eigen
            .project(&diff)
            .iter()
            .zip(&self.eigen.values)
            .map(|(&c, &lambda)| c * c / lambda)
            .sum())
    }

    pub fn squared_euclidean(&self, z: &[T]) -> Result<T> {
        self.check_dim(z)?;
        Ok(squared_distance(z, &self.mean))
    }

    fn check_dim(&self, z: &[T]) -> Result<()> {
        if z.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: z.len(),
            });
        }
        Ok(())
    }

    fn centered(&self, z: &[T]) -> Result<Vec<T>> {
        self.check_dim(z)?;
        Ok(z.iter().zip(&self.mean).map(|(&a, &b)| a - b).collect())
    }
}

/// Fitted detector: one Gaussian per cluster plus fit metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel<T> {
    pub clusters: Vec<ClusterGaussian<T>>,
    pub dim: usize,
    /// Whether inputs are ℓ2-normalized before modelling and scoring.
    pub normalize: bool,
    pub fit_seed: u64,
    /// SHA-256 of the training features (shape plus little-endian f64 payload).
    pub source_hash: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FitConfig {
    pub clusters: usize,
    pub seed: u64,
    pub normalize: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            clusters: 1,
            seed: 0,
            normalize: true,
        }
    }
}

/// Fits an ℓ2-normalized, `m`-cluster detector.
pub fn fit<T: Scalar>(features: &Matrix<T>, m: usize, seed: u64) -> Result<DetectorModel<T>> {
    fit_with(
        features,
        &FitConfig {
            clusters: m,
            seed,
            normalize: true,
        },
    )
}

pub fn fit_with<T: Scalar>(features: &Matrix<T>, config: &FitConfig) -> Result<DetectorModel<T>> {
    if features.is_empty() {
        return Err(Error::NoSamples);
    }
    let m = config.clusters;
    if m == 0 || m > features.rows() {
        return Err(Error::InvalidParameter(format!(
            "cluster count must be in 1..={}, got {m}",
            features.rows()
        )));
    }
    let z = if config.normalize {
        l2_normalize_rows(features).matrix
    } else {
        features.clone()
    };
    let n = T::from_count(z.rows());

    let groups: Vec<Matrix<T>> = if m == 1 {
        vec![z]
    } else {
        let km = kmeans_fit(&z, m, config.seed)?;
        (0..m)
            .map(|j| {
                let idx: Vec<usize> = (0..z.rows()).filter(|&i| km.assignments[i] == j).collect();
                z.select_rows(&idx)
            })
            .collect()
    };

    let clusters = groups
        .iter()
        .map(|g| {
            let est = sample_mean_cov(g)?;
            ClusterGaussian::from_moments(est.mean, &est.covariance, T::from_count(g.rows()) / n)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(DetectorModel {
        clusters,
        dim: features.cols(),
        normalize: config.normalize,
        fit_seed: config.seed,
        source_hash: feature_digest(features),
    })
}

impl<T: Scalar> DetectorModel<T> {
    /// Assembles a model from explicit clusters (all of dimension `d`).
    pub fn from_clusters(clusters: Vec<ClusterGaussian<T>>, normalize: bool) -> Result<Self> {
        let dim = clusters.first().ok_or(Error::NoSamples)?.dim();
        if let Some(bad) = clusters.iter().find(|c| c.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: bad.dim(),
            });
        }
        Ok(Self {
            clusters,
            dim,
            normalize,
            fit_seed: 0,
            source_hash: String::new(),
        })
    }

    pub fn m(&self) -> usize {
        self.clusters.len()
    }

    /// Applies the model's input transform (dimension check plus optional normalization).
    pub fn prepare(&self, z: &[T]) -> Result<Vec<T>> {
        if z.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: z.len(),
            });
        }
        let mut v = z.to_vec();
        if self.normalize {
            normalize_in_place(&mut v);
        }
        Ok(v)
    }

    pub fn prepare_matrix(&self, features: &Matrix<T>) -> Result<Matrix<T>> {
        if features.cols() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: features.cols(),
            });
        }
        Ok(if self.normalize {
            l2_normalize_rows(features).matrix
        } else {
            features.clone()
        })
    }

    /// Mahalanobis distance to every cluster, in cluster order, for an already-prepared input.
    pub fn cluster_distances_prepared(&self, z: &[T]) -> Result<Vec<T>> {
        self.clusters.iter().map(|c| c.mahalanobis(z)).collect()
    }

    /// Score and the index of the cluster attaining it (lowest index on ties).
    pub fn ssd_score_detail(&self, z: &[T]) -> Result<(T, usize)> {
        let z = self.prepare(z)?;
        Ok(argmin(&self.cluster_distances_prepared(&z)?))
    }
}

fn argmin<T: Scalar>(values: &[T]) -> (T, usize) {
    let mut best = (values[0], 0);
    for (j, &v) in values.iter().enumerate().skip(1) {
        if v < best.0 {
            best = (v, j);
        }
    }
    best
}

/// `min_m (z − μ_m)ᵀ Σ_m⁻¹ (z − μ_m)`.
pub fn ssd_score<T: Scalar>(model: &DetectorModel<T>, z: &[T]) -> Result<T> {
    model.ssd_score_detail(z).map(|(s, _)| s)
}

/// `min_m ‖z − μ_m‖²`, the unscaled baseline.
pub fn euclid_score<T: Scalar>(model: &DetectorModel<T>, z: &[T]) -> Result<T> {
    let z = model.prepare(z)?;
    let d = model
        .clusters
        .iter()
        .map(|c| c.squared_euclidean(&z))
        .collect::<Result<Vec<_>>>()?;
    Ok(argmin(&d).0)
}

/// [`ssd_score`] for every row, in parallel; row order is preserved.
pub fn ssd_score_batch<T: Scalar>(model: &DetectorModel<T>, features: &Matrix<T>) -> Result<Vec<T>> {
    check_cols(model.dim, features)?;
    (0..features.rows())
        .into_par_iter()
        .map(|i| ssd_score(model, features.row(i)))
        .collect()
}

pub fn euclid_score_batch<T: Scalar>(
    model: &DetectorModel<T>,
    features: &Matrix<T>,
) -> Result<Vec<T>> {
    check_cols(model.dim, features)?;
    (0..features.rows())
        .into_par_iter()
        .map(|i| euclid_score(model, features.row(i)))
        .collect()
}

fn check_cols<T: Scalar>(dim: usize, features: &Matrix<T>) -> Result<()> {
    if features.cols() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: features.cols(),
        });
    }
    Ok(())
}

/// Hex SHA-256 over `rows`, `cols` (u64 LE) and the row-major payload as f64 LE.
pub fn feature_digest<T: Scalar>(features: &Matrix<T>) -> String {
    let mut h = Sha256::new();
    h.update((features.rows() as u64).to_le_bytes());
    h.update((features.cols() as u64).to_le_bytes());
    for v in features.as_slice() {
        h.update(v.as_f64().to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, mean: &[f64], sd: f64, seed: u64) -> Matrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                mean.iter()
                    .map(|&m| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        m + sd * z
                    })
                    .collect()
            })
            .collect();
        Matrix::from_rows(&rows).unwrap()
    }

    fn raw(m: usize, seed: u64) -> FitConfig {
        FitConfig {
            clusters: m,
            seed,
            normalize: false,
        }
    }

    #[test]
    fn single_cluster_mean_near_generator() {
        let mu = [1.0, -2.0, 0.5];
        let x = gaussian(100, &mu, 1.0, 1);
        let model = fit_with(&x, &raw(1, 0)).unwrap();
        let err: f64 = squared_distance(&model.clusters[0].mean, &mu).sqrt();
        assert!(err < 3.0 / 10.0 * 3f64.sqrt(), "err {err}");
        assert_eq!(model.clusters[0].weight, 1.0);
    }

    #[test]
    fn two_blobs_recover_means() {
        let a = gaussian(100, &[-10.0, 0.0], 1.0, 2);
        let b = gaussian(100, &[10.0, 5.0], 1.0, 3);
        let mut rows: Vec<Vec<f64>> = a.row_iter().map(|r| r.to_vec()).collect();
        rows.extend(b.row_iter().map(|r| r.to_vec()));
        let x = Matrix::from_rows(&rows).unwrap();
        let model = fit_with(&x, &raw(2, 5)).unwrap();
        let mut means: Vec<Vec<f64>> = model.clusters.iter().map(|c| c.mean.clone()).collect();
        means.sort_by(|p, q| p[0].partial_cmp(&q[0]).unwrap());
        for (m, target) in means.iter().zip([[-10.0, 0.0], [10.0, 5.0]]) {
            // per-coordinate 3σ/√n bound
            for (v, t) in m.iter().zip(target) {
                assert!((v - t).abs() < 0.3);
            }
        }
    }

    #[test]
    fn single_point_scores_zero_on_itself() {
        let x = Matrix::from_rows(&[[0.6, 0.8]]).unwrap();
        let model = fit(&x, 1, 0).unwrap();
        let c = &model.clusters[0];
        assert!(c.ridge > 0.0);
        assert_eq!(ssd_score(&model, &[0.6, 0.8]).unwrap(), 0.0);
        assert!(ssd_score(&model, &[3.0, 4.0]).unwrap() < 1e-9);
    }

    #[test]
    fn identity_covariance_reduces_to_euclidean() {
        let c = ClusterGaussian::from_moments(vec![0.0; 4], &Matrix::identity(4), 1.0).unwrap();
        let model = DetectorModel::from_clusters(vec![c], false).unwrap();
        assert_eq!(ssd_score(&model, &[3.0, 4.0, 0.0, 0.0]).unwrap(), 25.0);
        assert_eq!(euclid_score(&model, &[1.0, 1.0, 0.0, 0.0]).unwrap(), 2.0);
        assert_eq!(euclid_score(&model, &[0.0; 4]).unwrap(), 0.0);
    }

    #[test]
    fn dimension_mismatch() {
        let x = gaussian(10, &[0.0, 0.0, 0.0], 1.0, 4);
        let model = fit(&x, 1, 0).unwrap();
        assert!(matches!(
            ssd_score(&model, &[1.0, 2.0]),
            Err(Error::DimensionMismatch {
                expected: 3,
                actual: 2
            })
        ));
        assert!(euclid_score(&model, &[1.0]).is_err());
    }

    #[test]
    fn tie_reports_lowest_cluster() {
        let c0 = ClusterGaussian::from_moments(vec![-1.0, 0.0], &Matrix::identity(2), 0.5).unwrap();
        let c1 = ClusterGaussian::from_moments(vec![1.0, 0.0], &Matrix::identity(2), 0.5).unwrap();
        let model = DetectorModel::from_clusters(vec![c0, c1], false).unwrap();
        assert_eq!(model.ssd_score_detail(&[0.0, 3.0]).unwrap(), (10.0, 0));
        assert_eq!(model.ssd_score_detail(&[0.9, 0.0]).unwrap().1, 1);
    }

    #[test]
    fn fit_rejects_bad_inputs() {
        let x = gaussian(5, &[0.0, 0.0], 1.0, 5);
        assert!(fit(&x, 0, 0).is_err());
        assert!(fit(&x, 6, 0).is_err());
        assert!(matches!(fit(&Matrix::<f64>::zeros(0, 2), 1, 0), Err(Error::NoSamples)));
    }

    #[test]
    fn digest_is_stable_and_sensitive() {
        let x = gaussian(5, &[0.0, 0.0], 1.0, 6);
        let y = gaussian(5, &[0.0, 0.0], 1.0, 7);
        assert_eq!(feature_digest(&x), feature_digest(&x.clone()));
        assert_ne!(feature_digest(&x), feature_digest(&y));
        assert_eq!(feature_digest(&x).len(), 64);
    }
}
