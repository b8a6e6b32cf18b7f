use crate::error::{Error, Result};
use crate::numerics::{dot, norm, Matrix};
use crate::scalar::Scalar;

/// Unit-norm embeddings of `N` items under two views each.
///
/// Rows `2t` and `2t + 1` are the two views of item `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveBatch<T> {
    embeddings: Matrix<T>,
    labels: Option<Vec<usize>>,
    temperature: T,
}

impl<T: Scalar> ContrastiveBatch<T> {
    pub fn new(embeddings: Matrix<T>, labels: Option<Vec<usize>>, temperature: T) -> Result<Self> {
        check_shape(&embeddings, temperature)?;
        let tol = T::tol(1e-9, 16.0);
        for (i, row) in embeddings.row_iter().enumerate() {
            let r = norm(row);
            if (r - T::one()).abs() > tol {
                return Err(Error::InvalidParameter(format!(
                    "row {i} has norm {r}, expected 1"
                )));
            }
        }
        if let Some(l) = &labels {
            if l.len() != embeddings.rows() {
                return Err(Error::DimensionMismatch {
                    expected: embeddings.rows(),
                    actual: l.len(),
                });
            }
            if let Some(t) = (0..l.len() / 2).find(|&t| l[2 * t] != l[2 * t + 1]) {
                return Err(Error::InvalidParameter(format!(
                    "views {} and {} of item {t} carry different labels",
                    2 * t,
                    2 * t + 1
                )));
            }
        }
        Ok(Self {
            embeddings,
            labels,
            temperature,
        })
    }

    pub fn embeddings(&self) -> &Matrix<T> {
        &self.embeddings
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn temperature(&self) -> T {
        self.temperature
    }

    /// Number of items `N` (half the row count).
    pub fn items(&self) -> usize {
        self.embeddings.rows() / 2
    }
}

fn check_shape<T: Scalar>(u: &Matrix<T>, temperature: T) -> Result<()> {
    let rows = u.rows();
    if rows < 4 || !rows.is_multiple_of(2) {
        return Err(Error::InvalidParameter(format!(
            "batch needs an even number of rows, at least 4; got {rows}"
        )));
    }
    if !(temperature > T::zero() && temperature.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    Ok(())
}

/// Positive sets: the paired view alone, or every other row with the same label.
fn positives(rows: usize, labels: Option<&[usize]>) -> Result<Vec<Vec<usize>>> {
    (0..rows)
        .map(|i| match labels {
            None => Ok(vec![i ^ 1]),
            Some(l) => {
                let p: Vec<usize> = (0..rows).filter(|&k| k != i && l[k] == l[i]).collect();
                if p.is_empty() {
                    Err(Error::NoPositive { label: l[i] })
                } else {
                    Ok(p)
                }
            }
        })
        .collect()
}

/// Per anchor: the logits `uᵢᵀu_k/τ` and their log-sum-exp over `k ≠ i`.
fn logits<T: Scalar>(u: &Matrix<T>, temperature: T) -> (Matrix<T>, Vec<T>) {
    let rows = u.rows();
    let mut a = Matrix::zeros(rows, rows);
    for i in 0..rows {
        for k in i + 1..rows {
            let v = dot(u.row(i), u.row(k)) / temperature;
            a[(i, k)] = v;
            a[(k, i)] = v;
        }
    }
    let lse = (0..rows)
        .map(|i| log_sum_exp(&a, i, (0..rows).filter(move |&k| k != i)))
        .collect();
    (a, lse)
}

/// `log Σ_{k∈idx} exp(row[k])`, max-shifted.
fn log_sum_exp<T: Scalar>(a: &Matrix<T>, i: usize, idx: impl Iterator<Item = usize> + Clone) -> T {
    let max = idx.clone().map(|k| a[(i, k)]).fold(T::neg_infinity(), T::max);
    let sum: T = idx.map(|k| (a[(i, k)] - max).exp()).sum();
    max + sum.ln()
}

/// Loss and `∂L/∂u` from one logit pass.
///
/// Anchor `i` contributes `lse_{k≠i}(a_ik) − log((1/|Pᵢ|) Σ_{p∈Pᵢ} exp(a_ip))`,
/// the average over positives sitting inside the logarithm. With
/// `g_ik = softmax_{k≠i}(a_i)_k − softmax_{Pᵢ}(a_i)_k`,
/// `∂L/∂u_a = (1/(2Nτ)) [Σ_k g_ak u_k + Σ_i g_ia u_i]`.
fn evaluate<T: Scalar>(u: &Matrix<T>, temperature: T, pos: &[Vec<usize>], want_grad: bool) -> (T, Option<Matrix<T>>) {
    let (a, lse) = logits(u, temperature);
    let rows = u.rows();
    let pos_lse: Vec<T> = (0..rows)
        .map(|i| log_sum_exp(&a, i, pos[i].iter().copied()))
        .collect();
    let mut total = T::zero();
    for i in 0..rows {
        total += lse[i] - pos_lse[i] + T::from_count(pos[i].len()).ln();
    }
    let loss = total / T::from_count(rows);
    if !want_grad {
        return (loss, None);
    }

    let mut g = Matrix::zeros(rows, rows);
    for i in 0..rows {
        for k in (0..rows).filter(|&k| k != i) {
            g[(i, k)] = (a[(i, k)] - lse[i]).exp();
        }
        for &j in &pos[i] {
            g[(i, j)] -= (a[(i, j)] - pos_lse[i]).exp();
        }
    }
    let scale = T::one() / (T::from_count(rows) * temperature);
    let mut out = Matrix::zeros(rows, u.cols());
    for a_row in 0..rows {
        let dst = out.row_mut(a_row);
        for k in 0..rows {
            let w = (g[(a_row, k)] + g[(k, a_row)]) * scale;
            if w != T::zero() {
                for (o, &x) in dst.iter_mut().zip(u.row(k)) {
                    *o += w * x;
                }
            }
        }
    }
    (loss, Some(out))
}

fn loss_with<T: Scalar>(u: &Matrix<T>, temperature: T, pos: &[Vec<usize>]) -> T {
    evaluate(u, temperature, pos, false).0
}

fn grad_with<T: Scalar>(u: &Matrix<T>, temperature: T, pos: &[Vec<usize>]) -> Matrix<T> {
    evaluate(u, temperature, pos, true).1.expect("gradient requested")
}

/// Loss and gradient together over arbitrary rows; `labels` selects SupCon.
pub fn contrastive_loss_and_grad<T: Scalar>(
    u: &Matrix<T>,
    labels: Option<&[usize]>,
    temperature: T,
) -> Result<(T, Matrix<T>)> {
    check_shape(u, temperature)?;
    if let Some(l) = labels {
        check_labels(u, l)?;
    }
    let (loss, grad) = evaluate(u, temperature, &positives(u.rows(), labels)?, true);
    Ok((loss, grad.expect("gradient requested")))
}

/// NT-Xent over arbitrary (not necessarily unit) rows; for gradient checks.
pub fn nt_xent_loss_raw<T: Scalar>(u: &Matrix<T>, temperature: T) -> Result<T> {
    check_shape(u, temperature)?;
    Ok(loss_with(u, temperature, &positives(u.rows(), None)?))
}

pub fn nt_xent_grad_raw<T: Scalar>(u: &Matrix<T>, temperature: T) -> Result<Matrix<T>> {
    check_shape(u, temperature)?;
    Ok(grad_with(u, temperature, &positives(u.rows(), None)?))
}

/// SupCon over arbitrary rows with explicit labels.
pub fn supcon_loss_raw<T: Scalar>(u: &Matrix<T>, labels: &[usize], temperature: T) -> Result<T> {
    check_shape(u, temperature)?;
    check_labels(u, labels)?;
    Ok(loss_with(u, temperature, &positives(u.rows(), Some(labels))?))
}

pub fn supcon_grad_raw<T: Scalar>(u: &Matrix<T>, labels: &[usize], temperature: T) -> Result<Matrix<T>> {
    check_shape(u, temperature)?;
    check_labels(u, labels)?;
    Ok(grad_with(u, temperature, &positives(u.rows(), Some(labels))?))
}

fn check_labels<T: Scalar>(u: &Matrix<T>, labels: &[usize]) -> Result<()> {
    if labels.len() != u.rows() {
        return Err(Error::DimensionMismatch {
            expected: u.rows(),
            actual: labels.len(),
        });
    }
    Ok(())
}

fn required_labels<T: Scalar>(batch: &ContrastiveBatch<T>) -> Result<&[usize]> {
    batch
        .labels()
        .ok_or_else(|| Error::InvalidParameter("supervised loss needs labels".into()))
}

/// `(1/2N) Σᵢ −log[exp(uᵢᵀu_{j(i)}/τ) / Σ_{k≠i} exp(uᵢᵀu_k/τ)]`; labels are ignored.
pub fn nt_xent_loss<T: Scalar>(batch: &ContrastiveBatch<T>) -> Result<T> {
    nt_xent_loss_raw(batch.embeddings(), batch.temperature())
}

pub fn nt_xent_grad<T: Scalar>(batch: &ContrastiveBatch<T>) -> Result<Matrix<T>> {
    nt_xent_grad_raw(batch.embeddings(), batch.temperature())
}

/// Every other same-label row is a positive; their exponentials are averaged
/// with weight `1/(2N_y − 1)` inside the logarithm, and the denominator runs
/// over all `k ≠ i`.
pub fn supcon_loss<T: Scalar>(batch: &ContrastiveBatch<T>) -> Result<T> {
    supcon_loss_raw(batch.embeddings(), required_labels(batch)?, batch.temperature())
}

pub fn supcon_grad<T: Scalar>(batch: &ContrastiveBatch<T>) -> Result<Matrix<T>> {
    supcon_grad_raw(batch.embeddings(), required_labels(batch)?, batch.temperature())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(rows: &[[f64; 2]], labels: Option<Vec<usize>>, tau: f64) -> ContrastiveBatch<f64> {
        ContrastiveBatch::new(Matrix::from_rows(rows).unwrap(), labels, tau).unwrap()
    }

    #[test]
    fn identical_rows_give_log_three() {
        for tau in [0.1, 1.0, 7.0] {
            let b = batch(&[[1.0, 0.0]; 4], Some(vec![0; 4]), tau);
            assert!((nt_xent_loss(&b).unwrap() - 3f64.ln()).abs() < 1e-12);
            assert!((supcon_loss(&b).unwrap() - 3f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn orthogonal_pairs() {
        let b = batch(&[[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]], None, 1.0);
        let expected = (1.0 + 2.0 * (-1f64).exp()).ln();
        assert!((nt_xent_loss(&b).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 0.55144).abs() < 1e-5);
    }

    #[test]
    fn antipodal_negatives_at_low_temperature() {
        let b = batch(&[[1.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [-1.0, 0.0]], None, 0.05);
        assert!(nt_xent_loss(&b).unwrap() < 1e-10);
    }

    #[test]
    fn validation() {
        let m = |rows: &[[f64; 2]]| Matrix::from_rows(rows).unwrap();
        assert!(ContrastiveBatch::new(m(&[[1.0, 0.0]; 2]), None, 1.0).is_err());
        assert!(ContrastiveBatch::new(m(&[[1.0, 0.0]; 5]), None, 1.0).is_err());
        assert!(ContrastiveBatch::new(m(&[[1.0, 0.0]; 4]), None, 0.0).is_err());
        assert!(ContrastiveBatch::new(m(&[[1.0, 0.1]; 4]), None, 1.0).is_err());
        assert!(ContrastiveBatch::new(m(&[[1.0, 0.0]; 4]), Some(vec![0, 1, 2, 2]), 1.0).is_err());
        assert!(ContrastiveBatch::new(m(&[[1.0, 0.0]; 4]), Some(vec![0, 0]), 1.0).is_err());
        let no_labels = batch(&[[1.0, 0.0]; 4], None, 1.0);
        assert!(supcon_loss(&no_labels).is_err());
    }

    #[test]
    fn lone_label_is_an_error() {
        let u = Matrix::from_rows(&[[1.0, 0.0]; 4]).unwrap();
        assert!(matches!(
            supcon_loss_raw(&u, &[0, 0, 1, 2], 1.0),
            Err(Error::NoPositive { label: 1 })
        ));
    }

    #[test]
    fn symmetric_batch_has_swapped_gradient() {
        let s = 0.5f64.sqrt();
        let rows = [[1.0, 0.0], [s, s], [-1.0, 0.0], [-s, -s]];
        let b = batch(&rows, None, 0.5);
        let g = nt_xent_grad(&b).unwrap();
        // point reflection maps pair 0 onto pair 1
        for (i, j) in [(0, 2), (1, 3)] {
            for c in 0..2 {
                assert!((g[(i, c)] + g[(j, c)]).abs() < 1e-12);
            }
        }
    }
}
