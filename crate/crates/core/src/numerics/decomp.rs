use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MAX_JACOBI_SWEEPS: usize = 100;

/// Eigendecomposition of a symmetric matrix: `A = Q diag(values) Qᵀ`.
///
/// Eigenvalues are sorted in non-increasing order; column `j` of `vectors`
/// is the unit eigenvector for `values[j]`, signed so its largest-magnitude
/// component is positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetricEigen<T> {
    pub values: Vec<T>,
    pub vectors: Matrix<T>,
}

impl<T: Scalar> SymmetricEigen<T> {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn vector(&self, j: usize) -> Vec<T> {
        self.vectors.column(j)
    }

    /// `Q Λ Qᵀ`.
    pub fn reconstruct(&self) -> Matrix<T> {
        let d = self.dim();
        let mut out = Matrix::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                let mut acc = T::zero();
                for (k, &lambda) in self.values.iter().enumerate() {
                    acc += self.vectors[(i, k)] * lambda * self.vectors[(j, k)];
                }
                out[(i, j)] = acc;
            }
        }
        out
    }

    /// Coordinates of `v` in the eigenbasis, `Qᵀ v`.
    pub fn project(&self, v: &[T]) -> Vec<T> {
        let d = self.dim();
        (0..d)
            .map(|k| (0..d).map(|i| self.vectors[(i, k)] * v[i]).sum())
            .collect()
    }
}

/// Lower-triangular `L` with `L Lᵀ = spd`.
pub fn cholesky<T: Scalar>(spd: &Matrix<T>) -> Result<Matrix<T>> {
    spd.check_symmetric()?;
    let n = spd.rows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut diag = spd[(j, j)];
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if !diag.is_finite() || diag <= T::zero() {
            return Err(Error::NotPositiveDefinite { pivot: j });
        }
        let ljj = diag.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut acc = spd[(i, j)];
            for k in 0..j {
                acc -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = acc / ljj;
        }
    }
    Ok(l)
}

/// Solves `L Lᵀ x = rhs` given the Cholesky factor `L`.
pub fn solve_spd<T: Scalar>(chol: &Matrix<T>, rhs: &[T]) -> Result<Vec<T>> {
    let n = chol.rows();
    if !chol.is_square() {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: chol.cols(),
        });
    }
    if rhs.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: rhs.len(),
        });
    }
    let y = forward_substitute(chol, rhs);
    let mut x = y;
    for i in (0..n).rev() {
        let mut acc = x[i];
        for k in (i + 1)..n {
            acc -= chol[(k, i)] * x[k];
        }
        x[i] = acc / chol[(i, i)];
    }
    Ok(x)
}

/// `L⁻¹ rhs` for lower-triangular `L`.
pub(crate) fn forward_substitute<T: Scalar>(chol: &Matrix<T>, rhs: &[T]) -> Vec<T> {
    let n = chol.rows();
    let mut y = vec![T::zero(); n];
    for i in 0..n {
        let row = chol.row(i);
        let mut acc = rhs[i];
        for k in 0..i {
            acc -= row[k] * y[k];
        }
        y[i] = acc / row[i];
    }
    y
}

/// `vᵀ Σ⁻¹ v` from the Cholesky factor of Σ, as `‖L⁻¹ v‖²`.
pub fn mahalanobis_sq<T: Scalar>(chol: &Matrix<T>, v: &[T]) -> Result<T> {
    if v.len() != chol.rows() {
        return Err(Error::DimensionMismatch {
            expected: chol.rows(),
            actual: v.len(),
        });
    }
    let y = forward_substitute(chol, v);
    Ok(y.iter().map(|&t| t * t).sum())
}

/// Returns `cov` unchanged when it already factors, otherwise `cov + εI`
/// with `ε = 1e-6 · max(trace/d, 1e-12)`.
///
/// Indefinite inputs that the first ridge cannot fix get ε escalated by
/// decades until the factorization succeeds.
pub fn regularize_spd<T: Scalar>(cov: &Matrix<T>) -> Result<Matrix<T>> {
    regularize_with_ridge(cov).map(|(m, _)| m)
}

/// Like [`regularize_spd`] but also reports the ridge that was added (zero if none).
pub fn regularize_with_ridge<T: Scalar>(cov: &Matrix<T>) -> Result<(Matrix<T>, T)> {
    cov.check_symmetric()?;
    if cov.rows() == 0 || cholesky(cov).is_ok() {
        return Ok((cov.clone(), T::zero()));
    }
    let d = T::from_count(cov.rows());
    let scale = (cov.trace() / d).max(T::lit(1e-12));
    let mut eps = T::lit(1e-6) * scale;
    // Gershgorin: any ridge above this bound makes the matrix strictly diagonally dominant.
    let gershgorin = (0..cov.rows())
        .map(|i| {
            let off: T = (0..cov.cols())
                .filter(|&j| j != i)
                .map(|j| cov[(i, j)].abs())
                .sum();
            off - cov[(i, i)]
        })
        .fold(T::zero(), T::max);
    loop {
        let shifted = cov.add_diagonal(eps);
        if cholesky(&shifted).is_ok() {
            return Ok((shifted, eps));
        }
        if eps > gershgorin * T::lit(10.0) + scale {
            let eps = gershgorin * T::lit(2.0) + scale;
            return Ok((cov.add_diagonal(eps), eps));
        }
        eps *= T::lit(10.0);
    }
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Sweeps until the off-diagonal Frobenius norm is at most `1e-12` times the
/// matrix norm (or `f32` epsilon scale), capped at 100 sweeps.
pub fn eig_sym<T: Scalar>(cov: &Matrix<T>) -> Result<SymmetricEigen<T>> {
    cov.check_symmetric()?;
    let n = cov.rows();
    let mut a = cov.clone();
    // Symmetrize exactly so rotations see a consistent matrix.
    for i in 0..n {
        for j in (i + 1)..n {
            let m = (a[(i, j)] + a[(j, i)]) / T::lit(2.0);
            a[(i, j)] = m;
            a[(j, i)] = m;
        }
    }
    let mut v = Matrix::identity(n);
    let tol = T::tol(1e-12, 4.0) * a.frobenius_norm();

    for _ in 0..MAX_JACOBI_SWEEPS {
        if off_diagonal_norm(&a) <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == T::zero() {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (T::lit(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                rotate(&mut a, &mut v, p, q, c, s, t);
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        a[(j, j)]
            .partial_cmp(&a[(i, i)])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let values: Vec<T> = order.iter().map(|&i| a[(i, i)]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (new_col, &old_col) in order.iter().enumerate() {
        let col = v.column(old_col);
        let pivot = col
            .iter()
            .enumerate()
            .fold((0, T::zero()), |best, (i, &x)| {
                if x.abs() > best.1.abs() {
                    (i, x)
                } else {
                    best
                }
            });
        let sign = if pivot.1 < T::zero() {
            -T::one()
        } else {
            T::one()
        };
        for (i, &x) in col.iter().enumerate() {
            vectors[(i, new_col)] = x * sign;
        }
    }
    Ok(SymmetricEigen { values, vectors })
}

fn off_diagonal_norm<T: Scalar>(a: &Matrix<T>) -> T {
    let n = a.rows();
    let mut acc = T::zero();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                acc += a[(i, j)] * a[(i, j)];
            }
        }
    }
    acc.sqrt()
}

fn rotate<T: Scalar>(a: &mut Matrix<T>, v: &mut Matrix<T>, p: usize, q: usize, c: T, s: T, t: T) {
    let n = a.rows();
    let apq = a[(p, q)];
    a[(p, p)] -= t * apq;
    a[(q, q)] += t * apq;
    a[(p, q)] = T::zero();
    a[(q, p)] = T::zero();
    for r in 0..n {
        if r == p || r == q {
            continue;
        }
        let arp = a[(r, p)];
        let arq = a[(r, q)];
        let new_rp = c * arp - s * arq;
        let new_rq = s * arp + c * arq;
        a[(r, p)] = new_rp;
        a[(p, r)] = new_rp;
        a[(r, q)] = new_rq;
        a[(q, r)] = new_rq;
    }
    for r in 0..n {
        let vrp = v[(r, p)];
        let vrq = v[(r, q)];
        v[(r, p)] = c * vrp - s * vrq;
        v[(r, q)] = s * vrp + c * vrq;
    }
}
