use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{cholesky, eig_sym, Matrix};

/// Covariance of one mixture component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "type", content = "value")]
pub enum CovarianceSpec {
    Identity,
    Isotropic(f64),
    Diagonal(Vec<f64>),
    /// Row-major `d×d`; must be symmetric positive definite.
    Full(Vec<f64>),
}

impl CovarianceSpec {
    pub fn to_matrix(&self, d: usize) -> Result<Matrix<f64>> {
        let bad = |msg: String| Error::InvalidParameter(format!("covariance descriptor: {msg}"));
        let m = match self {
            Self::Identity => Matrix::identity(d),
            Self::Isotropic(v) => {
                if !(*v > 0.0 && v.is_finite()) {
                    return Err(bad(format!("variance must be positive, got {v}")));
                }
                Matrix::identity(d).scale(*v)
            }
            Self::Diagonal(diag) => {
                if diag.len() != d {
                    return Err(bad(format!("{} variances for d = {d}", diag.len())));
                }
                if let Some(v) = diag.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
                    return Err(bad(format!("variance must be positive, got {v}")));
                }
                Matrix::from_diagonal(diag)
            }
            Self::Full(data) => {
                let m = Matrix::from_vec(d, d, data.clone())
                    .map_err(|e| bad(format!("full matrix: {e}")))?;
                m.check_symmetric().map_err(|e| bad(e.to_string()))?;
                m
            }
        };
        cholesky(&m).map_err(|e| bad(e.to_string()))?;
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    pub mean: Vec<f64>,
    pub covariance: CovarianceSpec,
    /// Relative mixing weight; normalized over components.
    #[serde(default = "unit_weight")]
    pub weight: f64,
}

fn unit_weight() -> f64 {
    1.0
}

/// A displacement of `amount` along the `rank`-th eigenvector (descending
/// eigenvalue order) of the first component's covariance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigenShift {
    pub rank: usize,
    pub amount: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum SynthKind {
    Gmm {
        components: Vec<GaussianComponent>,
    },
    /// The reference mixture with every component mean moved by the shifts.
    ShiftedGmm {
        components: Vec<GaussianComponent>,
        shifts: Vec<EigenShift>,
    },
    /// Two isotropic classes at `±separation/2` along the first axis.
    Blobs2d { separation: f64, spread: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    #[serde(flatten)]
    pub kind: SynthKind,
    pub d: usize,
    pub n: usize,
    pub seed: u64,
}

/// Generated rows with the component (or class) each was drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct Synthetic {
    pub features: Matrix<f64>,
    pub labels: Vec<usize>,
}

/// Sampling plan: per component a mean, a Cholesky factor and a cumulative weight.
struct Plan {
    means: Vec<Vec<f64>>,
    factors: Vec<Matrix<f64>>,
    cumulative: Vec<f64>,
}

fn plan_mixture(components: &[GaussianComponent], d: usize, shift: Option<&[f64]>) -> Result<Plan> {
    if components.is_empty() {
        return Err(Error::InvalidParameter("mixture needs at least one component".into()));
    }
    let total: f64 = components.iter().map(|c| c.weight).sum();
    if components.iter().any(|c| !(c.weight > 0.0 && c.weight.is_finite())) {
        return Err(Error::InvalidParameter("component weights must be positive".into()));
    }
    let mut plan = Plan {
        means: Vec::new(),
        factors: Vec::new(),
        cumulative: Vec::new(),
    };
    let mut acc = 0.0;
    for c in components {
        if c.mean.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: c.mean.len(),
            });
        }
        let mut mean = c.mean.clone();
        if let Some(s) = shift {
            mean.iter_mut().zip(s).for_each(|(m, &s)| *m += s);
        }
        plan.means.push(mean);
        plan.factors.push(cholesky(&c.covariance.to_matrix(d)?)?);
        acc += c.weight / total;
        plan.cumulative.push(acc);
    }
    Ok(plan)
}

fn shift_vector(components: &[GaussianComponent], shifts: &[EigenShift], d: usize) -> Result<Vec<f64>> {
    let first = components
        .first()
        .ok_or_else(|| Error::InvalidParameter("mixture needs at least one component".into()))?;
    let eigen = eig_sym(&first.covariance.to_matrix(d)?)?;
    let mut v = vec![0.0; d];
    for s in shifts {
        if s.rank >= d {
            return Err(Error::InvalidParameter(format!(
                "shift rank {} out of range for d = {d}",
                s.rank
            )));
        }
        for (vi, qi) in v.iter_mut().zip(eigen.vector(s.rank)) {
            *vi += s.amount * qi;
        }
    }
    Ok(v)
}

/// Seeded draws from `spec`; identical specs give identical output.
pub fn generate(spec: &SynthSpec) -> Result<Synthetic> {
    let d = spec.d;
    if d == 0 {
        return Err(Error::InvalidParameter("dimension must be at least 1".into()));
    }
    let plan = match &spec.kind {
        SynthKind::Gmm { components } => plan_mixture(components, d, None)?,
        SynthKind::ShiftedGmm { components, shifts } => {
            let s = shift_vector(components, shifts, d)?;
            plan_mixture(components, d, Some(&s))?
        }
        SynthKind::Blobs2d { separation, spread } => {
            if !(*spread > 0.0 && spread.is_finite() && separation.is_finite()) {
                return Err(Error::InvalidParameter(
                    "blobs need a positive spread and finite separation".into(),
                ));
            }
            let blob = |sign: f64| {
                let mut mean = vec![0.0; d];
                mean[0] = sign * separation / 2.0;
                GaussianComponent {
                    mean,
                    covariance: CovarianceSpec::Isotropic(spread * spread),
                    weight: 1.0,
                }
            };
            plan_mixture(&[blob(-1.0), blob(1.0)], d, None)?
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut data = Vec::with_capacity(spec.n * d);
    let mut labels = Vec::with_capacity(spec.n);
    let mut eps = vec![0.0; d];
    for _ in 0..spec.n {
        let u: f64 = rng.gen();
        let c = plan
            .cumulative
            .iter()
            .position(|&w| u < w)
            .unwrap_or(plan.cumulative.len() - 1);
        eps.iter_mut().for_each(|e| *e = StandardNormal.sample(&mut rng));
        let l = &plan.factors[c];
        for i in 0..d {
            let noise: f64 = (0..=i).map(|j| l[(i, j)] * eps[j]).sum();
            data.push(plan.means[c][i] + noise);
        }
        labels.push(c);
    }
    Ok(Synthetic {
        features: Matrix::from_vec(spec.n, d, data)?,
        labels,
    })
}

impl SynthSpec {
    /// Zero-mean Gaussian, `Σ = diag(100, 1, …, 1)`.
    pub fn canonical_in(d: usize, n: usize, seed: u64) -> Self {
        Self {
            kind: SynthKind::Gmm {
                components: vec![canonical_component(d)],
            },
            d,
            n,
            seed,
        }
    }

    /// [`SynthSpec::canonical_in`] displaced by 5 along the three
    /// highest-ranked unit-variance eigendirections.
    pub fn canonical_ood(d: usize, n: usize, seed: u64) -> Self {
        Self {
            kind: SynthKind::ShiftedGmm {
                components: vec![canonical_component(d)],
                shifts: (1..=3.min(d.saturating_sub(1)))
                    .map(|rank| EigenShift { rank, amount: 5.0 })
                    .collect(),
            },
            d,
            n,
            seed,
        }
    }

    /// Zero-mean Gaussian whose first `d/2` coordinates have variance 4, the rest 1.
    pub fn near_in(d: usize, n: usize, seed: u64) -> Self {
        Self {
            kind: SynthKind::Gmm {
                components: vec![near_component(d, 1.0)],
            },
            d,
            n,
            seed,
        }
    }

    /// A tighter copy of [`SynthSpec::near_in`] (std ×0.7) displaced by 3
    /// along its last, lowest-variance eigendirection.
    pub fn near_ood(d: usize, n: usize, seed: u64) -> Self {
        Self {
            kind: SynthKind::ShiftedGmm {
                components: vec![near_component(d, 0.49)],
                shifts: vec![EigenShift {
                    rank: d - 1,
                    amount: 3.0,
                }],
            },
            d,
            n,
            seed,
        }
    }

    /// Looks up a named preset.
    pub fn preset(name: &str, d: usize, n: usize, seed: u64) -> Result<Self> {
        match name {
            "canonical-in" => Ok(Self::canonical_in(d, n, seed)),
            "canonical-ood" => Ok(Self::canonical_ood(d, n, seed)),
            "near-in" => Ok(Self::near_in(d, n, seed)),
            "near-ood" => Ok(Self::near_ood(d, n, seed)),
            "blobs" => Ok(Self {
                kind: SynthKind::Blobs2d {
                    separation: 4.0,
                    spread: 1.0,
                },
                d,
                n,
                seed,
            }),
            other => Err(Error::InvalidParameter(format!(
                "unknown preset {other:?} (expected one of {})",
                PRESETS.join(", ")
            ))),
        }
    }
}

pub const PRESETS: [&str; 5] = ["canonical-in", "canonical-ood", "near-in", "near-ood", "blobs"];

fn near_component(d: usize, scale: f64) -> GaussianComponent {
    let var = (0..d).map(|i| if i < d / 2 { 4.0 * scale } else { scale }).collect();
    GaussianComponent {
        mean: vec![0.0; d],
        covariance: CovarianceSpec::Diagonal(var),
        weight: 1.0,
    }
}

fn canonical_component(d: usize) -> GaussianComponent {
    let mut var = vec![1.0; d];
    var[0] = 100.0;
    GaussianComponent {
        mean: vec![0.0; d],
        covariance: CovarianceSpec::Diagonal(var),
        weight: 1.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::column_mean;

    fn standard(d: usize, n: usize, seed: u64) -> SynthSpec {
        SynthSpec {
            kind: SynthKind::Gmm {
                components: vec![GaussianComponent {
                    mean: vec![0.0; d],
                    covariance: CovarianceSpec::Identity,
                    weight: 1.0,
                }],
            },
            d,
            n,
            seed,
        }
    }

    #[test]
    fn zero_rows() {
        let s = generate(&standard(3, 0, 1)).unwrap();
        assert_eq!((s.features.rows(), s.features.cols()), (0, 3));
    }

    #[test]
    fn sample_mean_within_monte_carlo_bound() {
        let s = generate(&standard(4, 10_000, 2)).unwrap();
        for m in column_mean(&s.features).unwrap() {
            assert!(m.abs() < 4.0 / 100.0, "mean {m}");
        }
    }

    #[test]
    fn deterministic() {
        let spec = SynthSpec::canonical_ood(16, 50, 9);
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let other = SynthSpec { seed: 10, ..spec.clone() };
        assert_ne!(generate(&spec).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn canonical_shift_hits_unit_variance_axes() {
        let spec = SynthSpec::canonical_ood(16, 1, 0);
        let SynthKind::ShiftedGmm { components, shifts } = &spec.kind else {
            panic!("expected shifted gmm")
        };
        let v = shift_vector(components, shifts, 16).unwrap();
        assert_eq!(v[0], 0.0);
        assert_eq!(v.iter().filter(|x| x.abs() == 5.0).count(), 3);
        assert!((v.iter().map(|x| x * x).sum::<f64>() - 75.0).abs() < 1e-12);
    }

    #[test]
    fn near_ood_shift_is_on_a_low_variance_axis() {
        let spec = SynthSpec::near_ood(8, 1, 0);
        let SynthKind::ShiftedGmm { components, shifts } = &spec.kind else {
            panic!("expected shifted gmm")
        };
        let v = shift_vector(components, shifts, 8).unwrap();
        let hit: Vec<usize> = (0..8).filter(|&i| v[i] != 0.0).collect();
        assert_eq!(hit.len(), 1);
        assert!(hit[0] >= 4);
        assert!((v[hit[0]].abs() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn presets_resolve() {
        for name in PRESETS {
            assert!(generate(&SynthSpec::preset(name, 6, 5, 1).unwrap()).is_ok());
        }
        assert!(SynthSpec::preset("nope", 6, 5, 1).is_err());
    }

    #[test]
    fn blobs_labels_match_sides() {
        let spec = SynthSpec {
            kind: SynthKind::Blobs2d {
                separation: 20.0,
                spread: 1.0,
            },
            d: 3,
            n: 200,
            seed: 4,
        };
        let s = generate(&spec).unwrap();
        for (row, &l) in s.features.row_iter().zip(&s.labels) {
            assert_eq!(row[0] > 0.0, l == 1);
        }
        assert!(s.labels.contains(&0) && s.labels.contains(&1));
    }

    #[test]
    fn invalid_covariances() {
        for cov in [
            CovarianceSpec::Isotropic(0.0),
            CovarianceSpec::Diagonal(vec![1.0, -1.0]),
            CovarianceSpec::Diagonal(vec![1.0]),
            CovarianceSpec::Full(vec![1.0, 2.0, 2.0, 1.0]),
            CovarianceSpec::Full(vec![1.0, 0.5, 0.0, 1.0]),
        ] {
            assert!(cov.to_matrix(2).is_err(), "{cov:?}");
        }
        assert!(CovarianceSpec::Full(vec![2.0, 0.5, 0.5, 1.0]).to_matrix(2).is_ok());
    }

    #[test]
    fn spec_json_round_trip() {
        let spec = SynthSpec::canonical_ood(4, 10, 3);
        let text = serde_json::to_string(&spec).unwrap();
        assert!(text.contains("\"kind\":\"shifted-gmm\""));
        let back: SynthSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, spec);
    }
}
