use serde::{Deserialize, Serialize};

use super::DetectorModel;
use crate::error::{Error, Result};
use crate::metrics::{auroc, LabeledScores};
use crate::numerics::Matrix;
use crate::scalar::Scalar;

/// Relative tolerance on `Σⱼ cⱼ/λⱼ` versus the Cholesky-route score.
pub const EIGEN_IDENTITY_TOL: f64 = 1e-8;

/// How well one eigen-direction of the in-distribution covariance separates the test sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentDiscrimination {
    /// Position in the descending eigenvalue order.
    pub index: usize,
    pub eigenvalue: f64,
    /// AUROC of `cⱼ(z) = (qⱼᵀ(z − μ))²` with outliers as positives.
    pub auroc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenReport {
    pub components: Vec<ComponentDiscrimination>,
    /// AUROC of `Σⱼ cⱼ`, i.e. squared euclidean distance to the mean.
    pub euclidean_auroc: f64,
    /// AUROC of `Σⱼ cⱼ/λⱼ`, i.e. the Mahalanobis score.
    pub mahalanobis_auroc: f64,
    /// Largest relative gap between `Σⱼ cⱼ/λⱼ` and the Cholesky-route score.
    pub max_identity_error: f64,
}

impl EigenReport {
    pub const TSV_HEADER: &'static str = "component\teigenvalue\tauroc";

    /// Per-component rows followed by the two aggregates.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from(Self::TSV_HEADER);
        out.push('\n');
        for c in &self.components {
            out.push_str(&format!("{}\t{}\t{}\n", c.index, c.eigenvalue, c.auroc));
        }
        out.push_str(&format!("euclidean\t\t{}\n", self.euclidean_auroc));
        out.push_str(&format!("mahalanobis\t\t{}\n", self.mahalanobis_auroc));
        out
    }
}

/// Per-eigenvector discrimination of a single-cluster model, checking the
/// eigenbasis form of the score against the Cholesky route on every test row.
pub fn eigen_discrimination_report<T: Scalar>(
    model: &DetectorModel<T>,
    in_test: &Matrix<T>,
    ood_test: &Matrix<T>,
) -> Result<EigenReport> {
    if model.m() != 1 {
        return Err(Error::InvalidParameter(format!(
            "eigen report needs a single-cluster model, got m = {}",
            model.m()
        )));
    }
    let cluster = &model.clusters[0];
    let d = model.dim;
    let tol = T::tol(EIGEN_IDENTITY_TOL, 1e4).as_f64();

    let n_in = in_test.rows();
    let total = n_in + ood_test.rows();
    let mut per_component: Vec<Vec<T>> = vec![Vec::with_capacity(total); d];
    let mut unscaled = Vec::with_capacity(total);
    let mut scaled = Vec::with_capacity(total);
    let mut max_err = 0.0f64;

    for set in [in_test, ood_test] {
        let prepared = model.prepare_matrix(set)?;
        for z in prepared.row_iter() {
            let diff: Vec<T> = z.iter().zip(&cluster.mean).map(|(&a, &b)| a - b).collect();
            let coords = cluster.eigen.project(&diff);
            let mut plain = T::zero();
            let mut weighted = T::zero();
            for (j, &c) in coords.iter().enumerate() {
                let cj = c * c;
                per_component[j].push(cj);
                plain += cj;
                weighted += cj / cluster.eigen.values[j];
            }
            let direct = cluster.mahalanobis(z)?;
            let denom = direct.abs().max(T::min_positive_value());
            let err = ((weighted - direct).abs() / denom).as_f64();
            if err.is_nan() || err > tol {
                return Err(Error::IdentityViolation {
                    error: err,
                    tolerance: tol,
                });
            }
            max_err = max_err.max(err);
            unscaled.push(plain);
            scaled.push(weighted);
        }
    }

    let mut labels = vec![false; n_in];
    labels.resize(total, true);
    let components = per_component
        .iter()
        .enumerate()
        .map(|(j, s)| {
            Ok(ComponentDiscrimination {
                index: j,
                eigenvalue: cluster.eigen.values[j].as_f64(),
                auroc: auroc(&LabeledScores::new(s, labels.clone())?)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(EigenReport {
        components,
        euclidean_auroc: auroc(&LabeledScores::new(&unscaled, labels.clone())?)?,
        mahalanobis_auroc: auroc(&LabeledScores::new(&scaled, labels)?)?,
        max_identity_error: max_err,
    })
}
