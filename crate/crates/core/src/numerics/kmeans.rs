//! Lloyd's k-means with k-means++ seeding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::Matrix;

#[derive(Debug, Clone)]
pub struct KMeansModel {
    pub k: usize,
    /// `k × dim`.
    pub centroids: Matrix,
    /// Sum of squared distances from each point to its assigned centroid.
    pub inertia: f64,
    /// Inertia after each assignment step, first entry from the seeded centroids.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

impl KMeansModel {
    pub fn dim(&self) -> usize {
        self.centroids.cols()
    }
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid and its squared distance. Ties go to the lower index.
#[inline]
fn nearest(point: &[f64], centroids: &Matrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter_rows().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn assign_all(points: &Matrix, centroids: &Matrix) -> Vec<(usize, f64)> {
    if points.rows() * centroids.rows() < 4096 {
        return points.iter_rows().map(|p| nearest(p, centroids)).collect();
    }
    (0..points.rows())
        .into_par_iter()
        .map(|r| nearest(points.row(r), centroids))
        .collect()
}

/// Fits `k` centroids to the rows of `points`.
///
/// Seeding is k-means++ driven by `seed`; Lloyd iterations stop once the
/// assignment is stable or after `max_iter` updates. A cluster that loses all
/// of its points is re-seeded at the point currently farthest from its own
/// centroid, so `k` centroids always remain distinct where the data allow.
pub fn kmeans_fit(points: &Matrix, k: usize, seed: u64, max_iter: usize) -> Result<KMeansModel> {
    if k == 0 {
        return Err(Error::invalid("k-means needs k >= 1"));
    }
    if points.rows() < k {
        return Err(Error::Data(format!(
            "k-means with k = {k} needs at least {k} points, got {}",
            points.rows()
        )));
    }
    points.ensure_finite("k-means points")?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_seed(points, k, &mut rng);

    let mut assignment = assign_all(points, &centroids);
    let mut history = vec![assignment.iter().map(|a| a.1).sum::<f64>()];
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        update_centroids(points, &assignment, &mut centroids);
        let next = assign_all(points, &centroids);
        let changed = next.iter().zip(&assignment).any(|(a, b)| a.0 != b.0);
        assignment = next;
        history.push(assignment.iter().map(|a| a.1).sum::<f64>());
        if !changed {
            break;
        }
    }
    Ok(KMeansModel {
        k,
        centroids,
        inertia: *history.last().expect("history is never empty"),
        inertia_history: history,
        iterations,
    })
}

fn plus_plus_seed(points: &Matrix, k: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let n = points.rows();
    let mut centroids = Matrix::zeros(k, points.cols());
    let first = rng.random_range(0..n);
    centroids.row_mut(0).copy_from_slice(points.row(first));
    let mut d2: Vec<f64> = points
        .iter_rows()
        .map(|p| sq_dist(p, centroids.row(0)))
        .collect();
    for j in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if acc > target {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(j).copy_from_slice(points.row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(points.row(i), centroids.row(j)));
        }
    }
    centroids
}

fn update_centroids(points: &Matrix, assignment: &[(usize, f64)], centroids: &mut Matrix) {
    let (k, dim) = centroids.shape();
    let mut sums = Matrix::zeros(k, dim);
    let mut counts = vec![0usize; k];
    for (p, &(j, _)) in points.iter_rows().zip(assignment) {
        counts[j] += 1;
        for (s, v) in sums.row_mut(j).iter_mut().zip(p) {
            *s += v;
        }
    }
    for j in 0..k {
        if counts[j] > 0 {
            let inv = 1.0 / counts[j] as f64;
            for (c, s) in centroids.row_mut(j).iter_mut().zip(sums.row(j)) {
                *c = s * inv;
            }
        }
    }
    // Empty clusters: move to the farthest points, each point used at most once.
    let mut dist: Vec<f64> = assignment.iter().map(|a| a.1).collect();
    for j in (0..k).filter(|&j| counts[j] == 0) {
        let (far, _) = dist
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &d)| {
                if d > best.1 {
                    (i, d)
                } else {
                    best
                }
            });
        log::debug!("k-means: cluster {j} empty, re-seeding at point {far}");
        centroids.row_mut(j).copy_from_slice(points.row(far));
        dist[far] = 0.0;
    }
}

/// Nearest-centroid id per row (squared Euclidean; ties go to the lower id).
pub fn kmeans_assign(model: &KMeansModel, points: &Matrix) -> Result<Vec<usize>> {
    if points.cols() != model.dim() {
        return Err(Error::shape(
            "kmeans_assign",
            format!(
                "points have {} dims, centroids have {}",
                points.cols(),
                model.dim()
            ),
        ));
    }
    Ok(assign_all(points, &model.centroids)
        .into_iter()
        .map(|a| a.0)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_triads() -> Matrix {
        Matrix::from_rows(&[
            [0.0, 0.0],
            [0.2, 0.1],
            [0.1, 0.3],
            [5.0, 5.0],
            [5.3, 4.9],
            [4.8, 5.2],
        ])
        .unwrap()
    }

    /// Optimal 2-partition inertia by enumerating every labelling.
    fn brute_force_two_way(points: &Matrix) -> (f64, Vec<Vec<f64>>) {
        let n = points.rows();
        let mut best = (f64::INFINITY, Vec::new());
        for mask in 1u32..(1 << n) - 1 {
            let mut groups = [Vec::new(), Vec::new()];
            for i in 0..n {
                groups[((mask >> i) & 1) as usize].push(points.row(i));
            }
            let mut cost = 0.0;
            let mut means = Vec::new();
            for g in &groups {
                let mut mean = vec![0.0; points.cols()];
                for p in g {
                    for (m, v) in mean.iter_mut().zip(p.iter()) {
                        *m += v / g.len() as f64;
                    }
                }
                cost += g.iter().map(|p| sq_dist(p, &mean)).sum::<f64>();
                means.push(mean);
            }
            if cost < best.0 {
                best = (cost, means);
            }
        }
        best
    }

    #[test]
    fn one_point_per_cluster_has_zero_inertia() {
        let pts = Matrix::from_rows(&[[0.0, 1.0], [2.0, 3.0], [-1.0, 4.0]]).unwrap();
        let m = kmeans_fit(&pts, 3, 1, 50).unwrap();
        assert_eq!(m.inertia, 0.0);
        let mut got: Vec<Vec<f64>> = m.centroids.iter_rows().map(<[f64]>::to_vec).collect();
        got.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert_eq!(got, vec![vec![-1.0, 4.0], vec![0.0, 1.0], vec![2.0, 3.0]]);
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let pts = two_triads();
        let m = kmeans_fit(&pts, 1, 3, 50).unwrap();
        let mean = pts.column_means();
        for (a, b) in m.centroids.row(0).iter().zip(&mean) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn two_triads_match_exhaustive_optimum() {
        let pts = two_triads();
        let (best_cost, mut best_means) = brute_force_two_way(&pts);
        let m = kmeans_fit(&pts, 2, 11, 100).unwrap();
        assert!((m.inertia - best_cost).abs() < 1e-12);
        let mut got: Vec<Vec<f64>> = m.centroids.iter_rows().map(<[f64]>::to_vec).collect();
        got.sort_by(|a, b| a[0].total_cmp(&b[0]));
        best_means.sort_by(|a, b| a[0].total_cmp(&b[0]));
        for (g, b) in got.iter().zip(&best_means) {
            assert!(sq_dist(g, b) < 1e-20);
        }
    }

    #[test]
    fn too_few_points_is_an_error() {
        let pts = Matrix::zeros(2, 3);
        assert!(matches!(kmeans_fit(&pts, 3, 0, 10), Err(Error::Data(_))));
        assert!(kmeans_fit(&pts, 0, 0, 10).is_err());
    }

    #[test]
    fn deterministic_given_seed() {
        let pts = Matrix::from_vec(
            40,
            3,
            (0..120).map(|i| ((i * 37 % 17) as f64).sin()).collect(),
        )
        .unwrap();
        let a = kmeans_fit(&pts, 4, 9, 100).unwrap();
        let b = kmeans_fit(&pts, 4, 9, 100).unwrap();
        assert_eq!(a.centroids, b.centroids);
        assert_eq!(a.inertia_history, b.inertia_history);
    }

    #[test]
    fn duplicate_points_survive_empty_clusters() {
        let pts = Matrix::from_rows(&[[1.0], [1.0], [1.0], [2.0]]).unwrap();
        let m = kmeans_fit(&pts, 3, 5, 20).unwrap();
        assert_eq!(m.inertia, 0.0);
        assert!(m.centroids.is_finite());
    }

    #[test]
    fn assignment_rules() {
        let model = KMeansModel {
            k: 2,
            centroids: Matrix::from_rows(&[[0.0, 0.0], [2.0, 0.0]]).unwrap(),
            inertia: 0.0,
            inertia_history: vec![],
            iterations: 0,
        };
        let pts = Matrix::from_rows(&[[2.0, 0.0], [1.0, 0.0], [0.0, 0.0]]).unwrap();
        assert_eq!(kmeans_assign(&model, &pts).unwrap(), vec![1, 0, 0]);
        assert!(kmeans_assign(&model, &Matrix::zeros(1, 3)).is_err());
    }
}
