use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::contrastive::contrastive_loss_and_grad;
use crate::detector::{fit, ssd_score_batch};
use crate::error::{Error, Result};
use crate::io::{generate, SynthKind, SynthSpec, Synthetic};
use crate::metrics::{auroc, LabeledScores};
use crate::numerics::{norm, Matrix};
use crate::scalar::Scalar;

/// Linear map followed by ℓ2 normalization: `u = Wz / ‖Wz‖`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ToyEncoder<T> {
    /// `p×d`.
    pub weights: Matrix<T>,
    pub seed: u64,
}

impl<T: Scalar> ToyEncoder<T> {
    /// Entries drawn i.i.d. from `N(0, 1/d)`.
    pub fn new(input_dim: usize, output_dim: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 {
            return Err(Error::InvalidParameter("encoder dimensions must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sd = (input_dim as f64).sqrt().recip();
        let data = (0..input_dim * output_dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                T::lit(sd * z)
            })
            .collect();
        Ok(Self {
            weights: Matrix::from_vec(output_dim, input_dim, data)?,
            seed,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn encode(&self, z: &[T]) -> Result<Vec<T>> {
        let mut v = self.weights.matvec(z)?;
        let r = norm(&v);
        if r > T::zero() {
            v.iter_mut().for_each(|x| *x /= r);
        }
        Ok(v)
    }

    pub fn encode_matrix(&self, features: &Matrix<T>) -> Result<Matrix<T>> {
        let rows = features
            .row_iter()
            .map(|z| self.encode(z))
            .collect::<Result<Vec<_>>>()?;
        if rows.is_empty() {
            return Ok(Matrix::zeros(0, self.output_dim()));
        }
        Matrix::from_rows(&rows)
    }
}

/// How the two views of an item are produced: `x + scale·ε` with `ε ~ N(0, I)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JitterSpec {
    pub scale: f64,
    /// Draw fresh views every step; otherwise one fixed pair per item.
    pub resample: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
    /// Items per step; `0` or anything `≥ n` uses every item.
    pub batch_size: usize,
    pub temperature: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 300,
            lr: 0.1,
            seed: 0,
            batch_size: 0,
            temperature: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome<T> {
    pub encoder: ToyEncoder<T>,
    /// Batch loss at each step, evaluated before that step's update.
    pub losses: Vec<f64>,
}

impl<T> TrainOutcome<T> {
    /// `step,loss` rows.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("step,loss\n");
        for (s, l) in self.losses.iter().enumerate() {
            out.push_str(&format!("{s},{l}\n"));
        }
        out
    }

    /// Fraction of steps whose loss is below the previous step's.
    pub fn decreasing_fraction(&self) -> f64 {
        if self.losses.len() < 2 {
            return 1.0;
        }
        let down = self.losses.windows(2).filter(|w| w[1] < w[0]).count();
        down as f64 / (self.losses.len() - 1) as f64
    }
}

/// Plain SGD on `W`, minimizing NT-Xent (or SupCon when `labels` are given)
/// over jittered view pairs. Deterministic given `config.seed`.
pub fn train_toy<T: Scalar>(
    data: &Matrix<T>,
    jitter: JitterSpec,
    encoder: ToyEncoder<T>,
    config: &TrainConfig,
    labels: Option<&[usize]>,
) -> Result<TrainOutcome<T>> {
    let n = data.rows();
    let d = data.cols();
    if config.steps == 0 {
        return Err(Error::InvalidParameter("steps must be at least 1".into()));
    }
    if n < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 items, got {n}")));
    }
    if d != encoder.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: encoder.input_dim(),
            actual: d,
        });
    }
    if let Some(l) = labels {
        if l.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: l.len(),
            });
        }
    }
    if !(config.lr >= 0.0 && config.lr.is_finite() && jitter.scale >= 0.0 && jitter.scale.is_finite()) {
        return Err(Error::InvalidParameter("lr and jitter scale must be finite and non-negative".into()));
    }
    let items = if config.batch_size == 0 { n } else { config.batch_size.min(n) };
    let tau = T::lit(config.temperature);
    let lr = T::lit(config.lr);
    let scale = T::lit(jitter.scale);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let draw_view = |x: &[T], rng: &mut ChaCha8Rng| -> Vec<T> {
        x.iter()
            .map(|&v| {
                let e: f64 = StandardNormal.sample(rng);
                v + scale * T::lit(e)
            })
            .collect()
    };
    let fixed: Option<Vec<[Vec<T>; 2]>> = (!jitter.resample).then(|| {
        data.row_iter()
            .map(|x| [draw_view(x, &mut rng), draw_view(x, &mut rng)])
            .collect()
    });

    let mut w = encoder.weights;
    let p = w.rows();
    let mut losses = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let chosen: Vec<usize> = if items == n {
            (0..n).collect()
        } else {
            sample(&mut rng, n, items).into_vec()
        };
        let mut inputs: Vec<Vec<T>> = Vec::with_capacity(2 * items);
        for &t in &chosen {
            match &fixed {
                Some(views) => inputs.extend(views[t].iter().cloned()),
                None => {
                    let x = data.row(t);
                    inputs.push(draw_view(x, &mut rng));
                    inputs.push(draw_view(x, &mut rng));
                }
            }
        }

        let mut u = Matrix::zeros(2 * items, p);
        let mut lengths = Vec::with_capacity(2 * items);
        for (r, x) in inputs.iter().enumerate() {
            let v = w.matvec(x)?;
            let len = norm(&v);
            lengths.push(len);
            for (dst, &vi) in u.row_mut(r).iter_mut().zip(&v) {
                *dst = vi / len;
            }
        }

        let batch_labels: Option<Vec<usize>> =
            labels.map(|l| chosen.iter().flat_map(|&t| [l[t], l[t]]).collect());
        let (loss, grad_u) = contrastive_loss_and_grad(&u, batch_labels.as_deref(), tau)?;
        let loss = loss.as_f64();
        if !loss.is_finite() {
            return Err(Error::Diverged { step });
        }
        losses.push(loss);

        // ∂u/∂v = (I − uuᵀ)/‖v‖, ∂v/∂W = x
        let mut grad_w = Matrix::<T>::zeros(p, d);
        for (r, x) in inputs.iter().enumerate() {
            let ur = u.row(r);
            let gr = grad_u.row(r);
            let along: T = ur.iter().zip(gr).map(|(&a, &b)| a * b).sum();
            for i in 0..p {
                let dv = (gr[i] - ur[i] * along) / lengths[r];
                for (gw, &xj) in grad_w.row_mut(i).iter_mut().zip(x) {
                    *gw += dv * xj;
                }
            }
        }
        for (wi, &gi) in w.as_mut_slice().iter_mut().zip(grad_w.as_slice()) {
            *wi -= lr * gi;
        }
        if w.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { step });
        }
    }

    Ok(TrainOutcome {
        encoder: ToyEncoder {
            weights: w,
            seed: encoder.seed,
        },
        losses,
    })
}

/// End-to-end toy study: two isotropic classes, a contrastively trained
/// encoder, and SSD fitted on class 0 with class 1 as outliers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyExperiment {
    pub input_dim: usize,
    pub output_dim: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub separation: f64,
    pub jitter: JitterSpec,
    pub train: TrainConfig,
    /// Use class labels (SupCon) instead of NT-Xent.
    pub supervised: bool,
    /// Root seed; data, encoder init and training draw from offsets of it.
    pub seed: u64,
}

impl Default for ToyExperiment {
    fn default() -> Self {
        Self {
            input_dim: 8,
            output_dim: 2,
            n_train: 128,
            n_test: 2000,
            separation: 4.0,
            jitter: JitterSpec {
                scale: 0.5,
                resample: false,
            },
            train: TrainConfig {
                steps: 300,
                lr: 0.1,
                seed: 0,
                batch_size: 0,
                temperature: 2.0,
            },
            supervised: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyReport {
    pub auroc_before: f64,
    pub auroc_after: f64,
    pub initial: ToyEncoder<f64>,
    pub outcome: TrainOutcome<f64>,
}

impl ToyExperiment {
    pub fn run(&self) -> Result<ToyReport> {
        let blobs = |n, seed| {
            generate(&SynthSpec {
                kind: SynthKind::Blobs2d {
                    separation: self.separation,
                    spread: 1.0,
                },
                d: self.input_dim,
                n,
                seed,
            })
        };
        let train = blobs(self.n_train, self.seed)?;
        let test = blobs(self.n_test, self.seed.wrapping_add(1))?;
        let initial = ToyEncoder::new(self.input_dim, self.output_dim, self.seed.wrapping_add(2))?;
        let config = TrainConfig {
            seed: self.seed.wrapping_add(3),
            ..self.train
        };
        let labels = self.supervised.then_some(train.labels.as_slice());
        let outcome = train_toy(&train.features, self.jitter, initial.clone(), &config, labels)?;
        Ok(ToyReport {
            auroc_before: detection_auroc(&initial, &train, &test)?,
            auroc_after: detection_auroc(&outcome.encoder, &train, &test)?,
            initial,
            outcome,
        })
    }
}

fn class_rows(s: &Synthetic, class: usize) -> Matrix<f64> {
    let idx: Vec<usize> = (0..s.labels.len()).filter(|&i| s.labels[i] == class).collect();
    s.features.select_rows(&idx)
}

fn detection_auroc(encoder: &ToyEncoder<f64>, train: &Synthetic, test: &Synthetic) -> Result<f64> {
    let model = fit(&encoder.encode_matrix(&class_rows(train, 0))?, 1, 0)?;
    let score = |class| ssd_score_batch(&model, &encoder.encode_matrix(&class_rows(test, class))?);
    auroc(&LabeledScores::from_groups(&score(0)?, &score(1)?)?)
}
