use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit_with, ClusterGaussian, DetectorModel, FitConfig};
use crate::error::{Error, Result};
use crate::numerics::{
    cholesky, column_mean, l2_normalize_rows, ledoit_wolf, mahalanobis_sq, normalize_in_place,
    regularize_with_ridge, sample_mean_cov, Matrix,
};
use crate::scalar::Scalar;

/// Stream id for augmentation noise, kept apart from the k-means stream.
const AUGMENT_STREAM: u64 = 0x55d_a06;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FewShotConfig {
    /// Rows generated per shot, the shot itself included.
    pub n_augment: usize,
    /// Jitter std as a multiple of the per-dimension in-distribution std.
    pub jitter_scale: f64,
    pub seed: u64,
    /// Ledoit-Wolf shrinkage for the outlier covariance; `false` uses the
    /// plain sample covariance plus the regularization floor.
    pub shrinkage: bool,
    pub normalize: bool,
}

impl Default for FewShotConfig {
    fn default() -> Self {
        Self {
            n_augment: 10,
            jitter_scale: 0.1,
            seed: 0,
            shrinkage: true,
            normalize: true,
        }
    }
}

/// In-distribution Gaussian plus a shrunk Gaussian of a few amplified outliers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotModel<T> {
    /// Single-cluster detector for the in-distribution side.
    pub in_model: DetectorModel<T>,
    pub ood_mean: Vec<T>,
    /// Cholesky factor of the regularized outlier covariance `S_U`.
    pub ood_chol: Matrix<T>,
    pub ood_shrinkage: T,
    pub k: usize,
    pub n_augment: usize,
    pub jitter_scale: f64,
    pub seed: u64,
    pub shrinkage: bool,
}

impl<T: Scalar> FewShotModel<T> {
    pub fn dim(&self) -> usize {
        self.in_model.dim
    }

    /// The model with the in-distribution and outlier statistics exchanged.
    pub fn swapped(&self) -> Result<Self> {
        let in_cluster = &self.in_model.clusters[0];
        let as_in = ClusterGaussian::from_moments(
            self.ood_mean.clone(),
            &self
                .ood_chol
                .matmul(&self.ood_chol.transpose())
                .expect("square factor"),
            T::one(),
        )?;
        // keep the exact factor rather than a refactorization
        let as_in = ClusterGaussian {
            chol: self.ood_chol.clone(),
            ..as_in
        };
        let mut in_model = DetectorModel::from_clusters(vec![as_in], self.in_model.normalize)?;
        in_model.fit_seed = self.in_model.fit_seed;
        Ok(Self {
            in_model,
            ood_mean: in_cluster.mean.clone(),
            ood_chol: in_cluster.chol.clone(),
            ..self.clone()
        })
    }
}

/// Builds the amplified outlier set: every shot followed by `n_augment − 1`
/// jittered copies whose per-dimension noise std is `jitter_scale × scale[j]`.
///
/// Copies are renormalized when `normalize` is set, matching the feature map.
pub fn augment_shots<T: Scalar>(
    shots: &Matrix<T>,
    n_augment: usize,
    jitter_scale: f64,
    scale: &[T],
    normalize: bool,
    seed: u64,
) -> Result<Matrix<T>> {
    if shots.is_empty() {
        return Err(Error::InvalidParameter("need at least one outlier shot".into()));
    }
    if n_augment == 0 {
        return Err(Error::InvalidParameter("n_augment must be at least 1".into()));
    }
    if !(jitter_scale >= 0.0 && jitter_scale.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "jitter scale must be finite and non-negative, got {jitter_scale}"
        )));
    }
    if scale.len() != shots.cols() {
        return Err(Error::DimensionMismatch {
            expected: shots.cols(),
            actual: scale.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(AUGMENT_STREAM);
    let jitter = T::lit(jitter_scale);
    let d = shots.cols();
    let mut data = Vec::with_capacity(shots.rows() * n_augment * d);
    for shot in shots.row_iter() {
        data.extend_from_slice(shot);
        for _ in 1..n_augment {
            let mut copy: Vec<T> = shot
                .iter()
                .zip(scale)
                .map(|(&v, &s)| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    v + jitter * s * T::lit(z)
                })
                .collect();
            if normalize {
                normalize_in_place(&mut copy);
            }
            data.extend_from_slice(&copy);
        }
    }
    Matrix::from_vec(shots.rows() * n_augment, d, data)
}

/// Few-shot fit with Ledoit-Wolf shrinkage and ℓ2 normalization.
pub fn fewshot_fit<T: Scalar>(
    in_features: &Matrix<T>,
    ood_shots: &Matrix<T>,
    n_augment: usize,
    jitter_scale: f64,
    seed: u64,
) -> Result<FewShotModel<T>> {
    fewshot_fit_with(
        in_features,
        ood_shots,
        &FewShotConfig {
            n_augment,
            jitter_scale,
            seed,
            ..FewShotConfig::default()
        },
    )
}

pub fn fewshot_fit_with<T: Scalar>(
    in_features: &Matrix<T>,
    ood_shots: &Matrix<T>,
    config: &FewShotConfig,
) -> Result<FewShotModel<T>> {
    if ood_shots.cols() != in_features.cols() {
        return Err(Error::DimensionMismatch {
            expected: in_features.cols(),
            actual: ood_shots.cols(),
        });
    }
    if ood_shots.is_empty() {
        return Err(Error::InvalidParameter("need at least one outlier shot".into()));
    }
    let in_model = fit_with(
        in_features,
        &FitConfig {
            clusters: 1,
            seed: config.seed,
            normalize: config.normalize,
        },
    )?;

    let (z_in, shots) = if config.normalize {
        (
            l2_normalize_rows(in_features).matrix,
            l2_normalize_rows(ood_shots).matrix,
        )
    } else {
        (in_features.clone(), ood_shots.clone())
    };
    let spread = per_dimension_std(&z_in)?;
    let amplified = augment_shots(
        &shots,
        config.n_augment,
        config.jitter_scale,
        &spread,
        config.normalize,
        config.seed,
    )?;

    let estimate = if config.shrinkage {
        ledoit_wolf(&amplified)?
    } else {
        sample_mean_cov(&amplified)?
    };
    let (regularized, _) = regularize_with_ridge(&estimate.covariance)?;
    let ood_chol = cholesky(&regularized)?;

    Ok(FewShotModel {
        in_model,
        ood_mean: estimate.mean,
        ood_chol,
        ood_shrinkage: estimate.shrinkage_intensity,
        k: ood_shots.rows(),
        n_augment: config.n_augment,
        jitter_scale: config.jitter_scale,
        seed: config.seed,
        shrinkage: config.shrinkage,
    })
}

fn per_dimension_std<T: Scalar>(z: &Matrix<T>) -> Result<Vec<T>> {
    let mean = column_mean(z)?;
    let n = T::from_count(z.rows());
    let mut var = vec![T::zero(); z.cols()];
    for row in z.row_iter() {
        for ((v, &x), &m) in var.iter_mut().zip(row).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    Ok(var.into_iter().map(|v| (v / n).sqrt()).collect())
}

/// `(z − μ_in)ᵀ Σ_in⁻¹ (z − μ_in) − (z − μ_U)ᵀ S_U⁻¹ (z − μ_U)`; may be negative.
pub fn ssd_k_score<T: Scalar>(model: &FewShotModel<T>, z: &[T]) -> Result<T> {
    let z = model.in_model.prepare(z)?;
    let in_term = model.in_model.clusters[0].mahalanobis(&z)?;
    let diff: Vec<T> = z.iter().zip(&model.ood_mean).map(|(&a, &b)| a - b).collect();
    let ood_term = mahalanobis_sq(&model.ood_chol, &diff)?;
    Ok(in_term - ood_term)
}

pub fn ssd_k_score_batch<T: Scalar>(model: &FewShotModel<T>, features: &Matrix<T>) -> Result<Vec<T>> {
    if features.cols() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            actual: features.cols(),
        });
    }
    (0..features.rows())
        .into_par_iter()
        .map(|i| ssd_k_score(model, features.row(i)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::ssd_score;

    fn grid(n: usize, d: usize, offset: f64) -> Matrix<f64> {
        let data: Vec<f64> = (0..n * d)
            .map(|i| ((i * 7919) % 97) as f64 / 97.0 + offset)
            .collect();
        Matrix::from_vec(n, d, data).unwrap()
    }

    fn raw(n_augment: usize) -> FewShotConfig {
        FewShotConfig {
            n_augment,
            jitter_scale: 0.3,
            seed: 3,
            shrinkage: true,
            normalize: false,
        }
    }

    #[test]
    fn single_copy_is_the_shots() {
        let shots = grid(4, 3, 1.0);
        let u = augment_shots(&shots, 1, 5.0, &[1.0, 1.0, 1.0], false, 0).unwrap();
        assert_eq!(u, shots);
    }

    #[test]
    fn amplified_row_count_and_first_copy() {
        let shots = grid(3, 4, 0.0);
        let u = augment_shots(&shots, 5, 0.1, &[1.0; 4], false, 9).unwrap();
        assert_eq!(u.rows(), 15);
        for t in 0..3 {
            assert_eq!(u.row(5 * t), shots.row(t));
        }
    }

    #[test]
    fn one_shot_degenerates_to_floor() {
        let z_in = grid(50, 3, 0.0);
        let shot = Matrix::from_rows(&[[2.0, 2.0, 2.0]]).unwrap();
        let m = fewshot_fit_with(&z_in, &shot, &raw(1)).unwrap();
        assert_eq!(m.ood_shrinkage, 1.0);
        let eps: f64 = 1e-6 * 1e-12;
        let expect = Matrix::identity(3).scale(eps.sqrt());
        assert!(m.ood_chol.max_abs_diff(&expect) < 1e-20);
        let s = ssd_k_score(&m, &[0.5, 0.5, 0.5]).unwrap();
        assert!(s.is_finite());
        assert_eq!(ssd_k_score(&m, &[2.0, 2.0, 2.0]).unwrap(), ssd_score(&m.in_model, &[2.0, 2.0, 2.0]).unwrap());
    }

    #[test]
    fn in_mean_gives_non_positive_score() {
        let z_in = grid(60, 3, 0.0);
        let shots = grid(5, 3, 2.0);
        let m = fewshot_fit_with(&z_in, &shots, &raw(10)).unwrap();
        let mu = m.in_model.clusters[0].mean.clone();
        let s = ssd_k_score(&m, &mu).unwrap();
        let diff: Vec<f64> = mu.iter().zip(&m.ood_mean).map(|(a, b)| a - b).collect();
        let ood = mahalanobis_sq(&m.ood_chol, &diff).unwrap();
        assert_eq!(s, -ood);
        assert!(s <= 0.0);
    }

    #[test]
    fn identical_statistics_cancel() {
        let z_in = grid(60, 3, 0.0);
        let shots = grid(5, 3, 2.0);
        let mut m = fewshot_fit_with(&z_in, &shots, &raw(10)).unwrap();
        m.ood_mean = m.in_model.clusters[0].mean.clone();
        m.ood_chol = m.in_model.clusters[0].chol.clone();
        for z in grid(10, 3, 0.5).row_iter() {
            assert_eq!(ssd_k_score(&m, z).unwrap(), 0.0);
        }
    }

    #[test]
    fn swapping_negates() {
        let z_in = grid(60, 3, 0.0);
        let shots = grid(5, 3, 2.0);
        let m = fewshot_fit_with(&z_in, &shots, &raw(10)).unwrap();
        let s = m.swapped().unwrap();
        for z in grid(10, 3, 0.7).row_iter() {
            assert_eq!(ssd_k_score(&s, z).unwrap(), -ssd_k_score(&m, z).unwrap());
        }
    }

    #[test]
    fn errors() {
        let z_in = grid(20, 3, 0.0);
        assert!(fewshot_fit_with(&z_in, &Matrix::zeros(0, 3), &raw(2)).is_err());
        assert!(fewshot_fit_with(&z_in, &grid(2, 3, 1.0), &raw(0)).is_err());
        assert!(fewshot_fit_with(&z_in, &grid(2, 2, 1.0), &raw(2)).is_err());
        let m = fewshot_fit_with(&z_in, &grid(2, 3, 1.0), &raw(2)).unwrap();
        assert!(matches!(
            ssd_k_score(&m, &[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
