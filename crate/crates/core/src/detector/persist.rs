//! JSON model documents, schema ids `ssd-model/1` and `ssd-fewshot/1`.
//!
//! Matrices are stored row-major as flat arrays. Floats are written as
//! shortest round-trip decimals, so save → load reproduces every value bit
//! for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ClusterGaussian, DetectorModel, FewShotModel};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::numerics::{Matrix, SymmetricEigen};
use crate::scalar::Scalar;

pub const MODEL_SCHEMA: &str = "ssd-model/1";
pub const FEWSHOT_SCHEMA: &str = "ssd-fewshot/1";

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct ClusterDoc<T> {
    weight: T,
    ridge: T,
    mean: Vec<T>,
    chol: Vec<T>,
    eigenvalues: Vec<T>,
    eigenvectors: Vec<T>,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct ModelDoc<T> {
    schema: String,
    m: usize,
    d: usize,
    normalization: bool,
    fit_seed: u64,
    source_hash: String,
    clusters: Vec<ClusterDoc<T>>,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct FewShotDoc<T> {
    schema: String,
    in_model: ModelDoc<T>,
    ood_mean: Vec<T>,
    ood_chol: Vec<T>,
    ood_shrinkage: T,
    k: usize,
    n_augment: usize,
    jitter_scale: f64,
    seed: u64,
    shrinkage: bool,
}

fn square<T: Scalar>(what: &str, data: Vec<T>, d: usize) -> Result<Matrix<T>> {
    if data.len() != d * d {
        return Err(Error::Model(format!(
            "{what}: expected {} entries, found {}",
            d * d,
            data.len()
        )));
    }
    Matrix::from_vec(d, d, data)
}

fn check_factor<T: Scalar>(what: &str, chol: &Matrix<T>) -> Result<()> {
    for i in 0..chol.rows() {
        let d = chol[(i, i)];
        if d.is_nan() || d <= T::zero() {
            return Err(Error::Model(format!("{what}: non-positive diagonal at {i}")));
        }
        if (i + 1..chol.cols()).any(|j| chol[(i, j)] != T::zero()) {
            return Err(Error::Model(format!("{what}: not lower triangular in row {i}")));
        }
    }
    Ok(())
}

fn check_len(what: &str, len: usize, d: usize) -> Result<()> {
    if len != d {
        return Err(Error::Model(format!("{what}: expected length {d}, found {len}")));
    }
    Ok(())
}

impl<T: Scalar> ModelDoc<T> {
    fn from_model(model: &DetectorModel<T>) -> Self {
        Self {
            schema: MODEL_SCHEMA.to_string(),
            m: model.m(),
            d: model.dim,
            normalization: model.normalize,
            fit_seed: model.fit_seed,
            source_hash: model.source_hash.clone(),
            clusters: model
                .clusters
                .iter()
                .map(|c| ClusterDoc {
                    weight: c.weight,
                    ridge: c.ridge,
                    mean: c.mean.clone(),
                    chol: c.chol.as_slice().to_vec(),
                    eigenvalues: c.eigen.values.clone(),
                    eigenvectors: c.eigen.vectors.as_slice().to_vec(),
                })
                .collect(),
        }
    }

    fn into_model(self) -> Result<DetectorModel<T>> {
        expect_schema(MODEL_SCHEMA, &self.schema)?;
        if self.m == 0 || self.clusters.len() != self.m {
            return Err(Error::Model(format!(
                "m = {} but {} clusters stored",
                self.m,
                self.clusters.len()
            )));
        }
        let d = self.d;
        let clusters = self
            .clusters
            .into_iter()
            .enumerate()
            .map(|(j, c)| {
                check_len(&format!("cluster {j} mean"), c.mean.len(), d)?;
                check_len(&format!("cluster {j} eigenvalues"), c.eigenvalues.len(), d)?;
                let chol = square(&format!("cluster {j} chol"), c.chol, d)?;
                check_factor(&format!("cluster {j} chol"), &chol)?;
                let vectors = square(&format!("cluster {j} eigenvectors"), c.eigenvectors, d)?;
                Ok(ClusterGaussian {
                    mean: c.mean,
                    chol,
                    eigen: SymmetricEigen {
                        values: c.eigenvalues,
                        vectors,
                    },
                    weight: c.weight,
                    ridge: c.ridge,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DetectorModel {
            clusters,
            dim: d,
            normalize: self.normalization,
            fit_seed: self.fit_seed,
            source_hash: self.source_hash,
        })
    }
}

fn expect_schema(expected: &str, found: &str) -> Result<()> {
    if expected != found {
        return Err(Error::SchemaMismatch {
            expected: expected.to_string(),
            found: found.to_string(),
        });
    }
    Ok(())
}

fn schema_of(value: &serde_json::Value) -> String {
    value
        .get("schema")
        .and_then(|s| s.as_str())
        .unwrap_or("<missing>")
        .to_string()
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

impl<T: Scalar> DetectorModel<T> {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ModelDoc::from_model(self)).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        expect_schema(MODEL_SCHEMA, &schema_of(&value))?;
        let doc: ModelDoc<T> = serde_json::from_value(value)?;
        doc.into_model()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), self.to_json().as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&read(path.as_ref())?)
    }
}

impl<T: Scalar> FewShotModel<T> {
    pub fn to_json(&self) -> String {
        let doc = FewShotDoc {
            schema: FEWSHOT_SCHEMA.to_string(),
            in_model: ModelDoc::from_model(&self.in_model),
            ood_mean: self.ood_mean.clone(),
            ood_chol: self.ood_chol.as_slice().to_vec(),
            ood_shrinkage: self.ood_shrinkage,
            k: self.k,
            n_augment: self.n_augment,
            jitter_scale: self.jitter_scale,
            seed: self.seed,
            shrinkage: self.shrinkage,
        };
        serde_json::to_string_pretty(&doc).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        expect_schema(FEWSHOT_SCHEMA, &schema_of(&value))?;
        let doc: FewShotDoc<T> = serde_json::from_value(value)?;
        let in_model = doc.in_model.into_model()?;
        if in_model.m() != 1 {
            return Err(Error::Model("few-shot in-model must have one cluster".into()));
        }
        let d = in_model.dim;
        check_len("ood_mean", doc.ood_mean.len(), d)?;
        let ood_chol = square("ood_chol", doc.ood_chol, d)?;
        check_factor("ood_chol", &ood_chol)?;
        Ok(Self {
            in_model,
            ood_mean: doc.ood_mean,
            ood_chol,
            ood_shrinkage: doc.ood_shrinkage,
            k: doc.k,
            n_augment: doc.n_augment,
            jitter_scale: doc.jitter_scale,
            seed: doc.seed,
            shrinkage: doc.shrinkage,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), self.to_json().as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&read(path.as_ref())?)
    }
}

/// Either model kind, dispatched on the document's schema id.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelFile<T> {
    Ssd(DetectorModel<T>),
    FewShot(FewShotModel<T>),
}

impl<T: Scalar> ModelFile<T> {
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        match schema_of(&value).as_str() {
            MODEL_SCHEMA => Ok(Self::Ssd(DetectorModel::from_json(text)?)),
            FEWSHOT_SCHEMA => Ok(Self::FewShot(FewShotModel::from_json(text)?)),
            other => Err(Error::SchemaMismatch {
                expected: format!("{MODEL_SCHEMA} or {FEWSHOT_SCHEMA}"),
                found: other.to_string(),
            }),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&read(path.as_ref())?)
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Ssd(m) => m.dim,
            Self::FewShot(m) => m.dim(),
        }
    }

    /// Outlier scores for every row (SSD or SSD_k depending on the model kind).
    pub fn score_batch(&self, features: &Matrix<T>) -> Result<Vec<T>> {
        match self {
            Self::Ssd(m) => super::ssd_score_batch(m, features),
            Self::FewShot(m) => super::ssd_k_score_batch(m, features),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::{fewshot_fit, fit, ssd_k_score, ssd_score};

    fn data(n: usize, d: usize, phase: f64) -> Matrix<f64> {
        let v: Vec<f64> = (0..n * d)
            .map(|i| ((i as f64) * 0.37 + phase).sin() + 0.1 * (i % d) as f64)
            .collect();
        Matrix::from_vec(n, d, v).unwrap()
    }

    #[test]
    fn model_round_trip_is_exact() {
        let x = data(80, 4, 0.0);
        let model = fit(&x, 2, 7).unwrap();
        let back = DetectorModel::<f64>::from_json(&model.to_json()).unwrap();
        assert_eq!(back, model);
        for z in data(10, 4, 1.0).row_iter() {
            assert_eq!(ssd_score(&back, z).unwrap(), ssd_score(&model, z).unwrap());
        }
    }

    #[test]
    fn fewshot_round_trip_is_exact() {
        let model = fewshot_fit(&data(60, 3, 0.0), &data(4, 3, 2.0), 5, 0.1, 1).unwrap();
        let back = FewShotModel::<f64>::from_json(&model.to_json()).unwrap();
        assert_eq!(back, model);
        let z = [0.3, -0.2, 0.9];
        assert_eq!(ssd_k_score(&back, &z).unwrap(), ssd_k_score(&model, &z).unwrap());
    }

    #[test]
    fn schema_mismatch_is_reported() {
        let model = fit(&data(20, 2, 0.0), 1, 0).unwrap();
        let text = model.to_json().replace(MODEL_SCHEMA, "ssd-model/2");
        assert!(matches!(
            DetectorModel::<f64>::from_json(&text),
            Err(Error::SchemaMismatch { .. })
        ));
        assert!(matches!(
            FewShotModel::<f64>::from_json(&model.to_json()),
            Err(Error::SchemaMismatch { .. })
        ));
        assert!(matches!(
            ModelFile::<f64>::from_json(&text),
            Err(Error::SchemaMismatch { .. })
        ));
    }

    #[test]
    fn model_file_dispatch() {
        let model = fit(&data(20, 2, 0.0), 1, 0).unwrap();
        assert!(matches!(
            ModelFile::<f64>::from_json(&model.to_json()).unwrap(),
            ModelFile::Ssd(_)
        ));
    }

    #[test]
    fn corrupt_factor_is_rejected() {
        let model = fit(&data(20, 2, 0.0), 1, 0).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&model.to_json()).unwrap();
        v["clusters"][0]["chol"][1] = serde_json::json!(0.5);
        assert!(matches!(
            DetectorModel::<f64>::from_json(&v.to_string()),
            Err(Error::Model(_))
        ));
        v["clusters"][0]["chol"] = serde_json::json!([1.0]);
        assert!(DetectorModel::<f64>::from_json(&v.to_string()).is_err());
    }
}
