//! k-means partitioning of in-distribution features.
//!
//! Seeding is k-means++ from a ChaCha8 stream, followed by Lloyd iterations
//! until no centroid moves more than [`CONVERGENCE_SHIFT`] or
//! [`MAX_ITERATIONS`] is reached. A cluster that goes empty steals the point
//! lying farthest from its own centroid, so the requested `m` is always kept.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{squared_distance, Matrix};
use crate::scalar::Scalar;

pub const MAX_ITERATIONS: usize = 100;
pub const CONVERGENCE_SHIFT: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansModel<T> {
    pub centroids: Matrix<T>,
    /// Cluster index of each training row.
    pub assignments: Vec<usize>,
    /// Sum of squared distances from each training row to its centroid.
    pub inertia: T,
    pub iterations_run: usize,
    pub seed: u64,
}

impl<T: Scalar> KMeansModel<T> {
    pub fn m(&self) -> usize {
        self.centroids.rows()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.m()];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }
}

pub fn kmeans_fit<T: Scalar>(features: &Matrix<T>, m: usize, seed: u64) -> Result<KMeansModel<T>> {
    let n = features.rows();
    if m == 0 || m > n {
        return Err(Error::InvalidParameter(format!(
            "cluster count must be in 1..={n}, got {m}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_plus_plus(features, m, &mut rng);
    let mut assignments = vec![0; n];
    let mut iterations_run = 0;
    let mut prev_inertia: Option<T> = None;

    for iter in 0..MAX_ITERATIONS {
        assignments = nearest_all(&centroids, features);
        repair_empty_clusters(features, &centroids, &mut assignments);
        let updated = cluster_means(features, &assignments, &centroids);
        let shift = (0..m)
            .map(|j| squared_distance(updated.row(j), centroids.row(j)).sqrt())
            .fold(T::zero(), T::max);
        centroids = updated;
        iterations_run = iter + 1;

        if cfg!(debug_assertions) {
            let inertia = inertia_of(features, &centroids, &assignments);
            if let Some(prev) = prev_inertia {
                let slack = T::tol(1e-9, 64.0) * prev.max(T::one());
                debug_assert!(
                    inertia <= prev + slack,
                    "k-means inertia increased: {prev} -> {inertia}"
                );
            }
            prev_inertia = Some(inertia);
        }

        if shift < T::lit(CONVERGENCE_SHIFT) {
            break;
        }
    }

    let inertia = inertia_of(features, &centroids, &assignments);
    Ok(KMeansModel {
        centroids,
        assignments,
        inertia,
        iterations_run,
        seed,
    })
}

/// Index of the nearest centroid for every row of `points`; ties go to the lowest index.
pub fn assign_nearest<T: Scalar>(model: &KMeansModel<T>, points: &Matrix<T>) -> Result<Vec<usize>> {
    if points.cols() != model.centroids.cols() {
        return Err(Error::DimensionMismatch {
            expected: model.centroids.cols(),
            actual: points.cols(),
        });
    }
    Ok(nearest_all(&model.centroids, points))
}

fn nearest<T: Scalar>(centroids: &Matrix<T>, point: &[T]) -> (usize, T) {
    let mut best = (0, T::infinity());
    for (j, c) in centroids.row_iter().enumerate() {
        let d = squared_distance(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn nearest_all<T: Scalar>(centroids: &Matrix<T>, points: &Matrix<T>) -> Vec<usize> {
    (0..points.rows())
        .into_par_iter()
        .map(|i| nearest(centroids, points.row(i)).0)
        .collect()
}

fn kmeans_plus_plus<T: Scalar>(features: &Matrix<T>, m: usize, rng: &mut ChaCha8Rng) -> Matrix<T> {
    let n = features.rows();
    let mut chosen = Vec::with_capacity(m);
    chosen.push(rng.gen_range(0..n));
    let mut dist: Vec<f64> = (0..n)
        .map(|i| squared_distance(features.row(i), features.row(chosen[0])).as_f64())
        .collect();

    while chosen.len() < m {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            let target = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in dist.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                acc += w;
                pick = Some(i);
                if acc > target {
                    break;
                }
            }
            pick.expect("positive total weight has a positive entry")
        } else {
            // all remaining points coincide with a chosen centroid
            (0..n).find(|i| !chosen.contains(i)).expect("m <= n")
        };
        chosen.push(next);
        for (i, d) in dist.iter_mut().enumerate() {
            let nd = squared_distance(features.row(i), features.row(next)).as_f64();
            if nd < *d {
                *d = nd;
            }
        }
    }
    features.select_rows(&chosen)
}

fn repair_empty_clusters<T: Scalar>(
    features: &Matrix<T>,
    centroids: &Matrix<T>,
    assignments: &mut [usize],
) {
    let m = centroids.rows();
    let mut sizes = vec![0usize; m];
    for &a in assignments.iter() {
        sizes[a] += 1;
    }
    for empty in 0..m {
        if sizes[empty] > 0 {
            continue;
        }
        let mut victim: Option<(usize, T)> = None;
        for (i, &a) in assignments.iter().enumerate() {
            if sizes[a] < 2 {
                continue;
            }
            let d = squared_distance(features.row(i), centroids.row(a));
            if victim.is_none_or(|(_, best)| d > best) {
                victim = Some((i, d));
            }
        }
        let (i, _) = victim.expect("m <= n leaves a cluster with at least two points");
        sizes[assignments[i]] -= 1;
        assignments[i] = empty;
        sizes[empty] = 1;
    }
}

fn cluster_means<T: Scalar>(
    features: &Matrix<T>,
    assignments: &[usize],
    previous: &Matrix<T>,
) -> Matrix<T> {
    let m = previous.rows();
    let mut sums = Matrix::zeros(m, features.cols());
    let mut counts = vec![0usize; m];
    for (row, &a) in features.row_iter().zip(assignments) {
        counts[a] += 1;
        for (s, &v) in sums.row_mut(a).iter_mut().zip(row) {
            *s += v;
        }
    }
    for (j, &c) in counts.iter().enumerate() {
        if c == 0 {
            sums.row_mut(j).copy_from_slice(previous.row(j));
        } else {
            let cf = T::from_count(c);
            sums.row_mut(j).iter_mut().for_each(|s| *s /= cf);
        }
    }
    sums
}

fn inertia_of<T: Scalar>(features: &Matrix<T>, centroids: &Matrix<T>, assignments: &[usize]) -> T {
    features
        .row_iter()
        .zip(assignments)
        .map(|(row, &a)| squared_distance(row, centroids.row(a)))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::sample_mean_cov;
    use rand_distr::{Distribution, StandardNormal};

    fn blobs(seed: u64, n_per: usize) -> (Matrix<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers = [[-5.0, 0.0, 1.0], [5.0, 2.0, -1.0]];
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (label, c) in centers.iter().enumerate() {
            for _ in 0..n_per {
                let row: Vec<f64> = c
                    .iter()
                    .map(|&m| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        m + 0.5 * z
                    })
                    .collect();
                rows.push(row);
                labels.push(label);
            }
        }
        (Matrix::from_rows(&rows).unwrap(), labels)
    }

    #[test]
    fn rejects_bad_m() {
        let (x, _) = blobs(1, 3);
        assert!(kmeans_fit(&x, 0, 0).is_err());
        assert!(kmeans_fit(&x, 7, 0).is_err());
    }

    #[test]
    fn m_equals_n_has_zero_inertia() {
        let (x, _) = blobs(2, 5);
        let model = kmeans_fit(&x, x.rows(), 9).unwrap();
        assert_eq!(model.inertia, 0.0);
        assert!(model.cluster_sizes().iter().all(|&s| s == 1));
    }

    #[test]
    fn single_cluster_is_global_mean() {
        let (x, _) = blobs(3, 20);
        let model = kmeans_fit(&x, 1, 0).unwrap();
        let est = sample_mean_cov(&x).unwrap();
        for (a, b) in model.centroids.row(0).iter().zip(&est.mean) {
            assert!((a - b).abs() < 1e-12);
        }
        let expect = x.rows() as f64 * est.covariance.trace();
        assert!((model.inertia - expect).abs() < 1e-9 * expect);
    }

    #[test]
    fn separated_blobs_are_pure() {
        let (x, labels) = blobs(4, 50);
        let model = kmeans_fit(&x, 2, 17).unwrap();
        let map0 = model.assignments[0];
        for (a, l) in model.assignments.iter().zip(&labels) {
            assert_eq!(*a == map0, *l == labels[0]);
        }
    }

    #[test]
    fn centroids_are_cluster_means_and_inertia_recomputes() {
        let (x, _) = blobs(5, 40);
        let model = kmeans_fit(&x, 3, 1).unwrap();
        for j in 0..3 {
            let members: Vec<usize> = (0..x.rows()).filter(|&i| model.assignments[i] == j).collect();
            assert!(!members.is_empty());
            let mean = sample_mean_cov(&x.select_rows(&members)).unwrap().mean;
            for (a, b) in model.centroids.row(j).iter().zip(&mean) {
                assert!((a - b).abs() < 1e-9);
            }
        }
        let recomputed = inertia_of(&x, &model.centroids, &model.assignments);
        assert!((recomputed - model.inertia).abs() < 1e-9);
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let (x, _) = blobs(6, 30);
        let a = kmeans_fit(&x, 3, 42).unwrap();
        let b = kmeans_fit(&x, 3, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn duplicate_points_keep_m() {
        let x = Matrix::from_rows(&[[1.0, 1.0], [1.0, 1.0], [1.0, 1.0], [2.0, 2.0]]).unwrap();
        let model = kmeans_fit(&x, 3, 0).unwrap();
        assert_eq!(model.m(), 3);
        assert!(model.cluster_sizes().iter().all(|&s| s > 0));
    }

    #[test]
    fn assign_exact_and_tie() {
        let model = KMeansModel {
            centroids: Matrix::from_rows(&[[0.0, 0.0], [2.0, 0.0]]).unwrap(),
            assignments: vec![],
            inertia: 0.0,
            iterations_run: 0,
            seed: 0,
        };
        let pts = Matrix::from_rows(&[[2.0, 0.0], [1.0, 0.0], [0.0, 0.0]]).unwrap();
        assert_eq!(assign_nearest(&model, &pts).unwrap(), vec![1, 0, 0]);
        let bad = Matrix::from_rows(&[[1.0, 2.0, 3.0]]).unwrap();
        assert!(matches!(
            assign_nearest(&model, &bad),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn assign_matches_brute_force_scan() {
        let (x, _) = blobs(7, 25);
        let model = kmeans_fit(&x, 4, 3).unwrap();
        let (pts, _) = blobs(8, 10);
        let got = assign_nearest(&model, &pts).unwrap();
        for (i, &g) in got.iter().enumerate() {
            let p = pts.row(i);
            let dists: Vec<f64> = (0..4)
                .map(|j| {
                    p.iter()
                        .zip(model.centroids.row(j))
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum()
                })
                .collect();
            let min = dists.iter().cloned().fold(f64::INFINITY, f64::min);
            let first = dists.iter().position(|&d| d == min).unwrap();
            assert_eq!(g, first);
        }
    }
}
