//! Lloyd's k-means with greedy k-means++ seeding.

use std::cmp::Ordering;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::matrix::{sq_dist, Matrix};
use crate::scalar::Scalar;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansOptions {
    pub max_iters: usize,
    /// Stop once `(previous - current) / previous` inertia drops below this.
    pub rel_tol: f64,
    /// Independent seedings; the lowest-inertia run is kept.
    pub restarts: usize,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        Self {
            max_iters: 100,
            rel_tol: 1e-6,
            restarts: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult<T: Scalar = f64> {
    pub centroids: Matrix<T>,
    pub assignments: Vec<usize>,
    /// Sum of squared distances of points to their assigned centroid.
    pub inertia: T,
    pub iterations: usize,
    /// Inertia after every Lloyd iteration.
    pub trace: Vec<T>,
}

impl<T: Scalar> KMeansResult<T> {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.centroids.rows()];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }
}

/// Single k-means run from one k-means++ seeding drawn with `seed`.
pub fn kmeans<T: Scalar>(
    points: &Matrix<T>,
    k: usize,
    seed: u64,
    max_iters: usize,
    rel_tol: f64,
) -> Result<KMeansResult<T>> {
    let n_points = points.rows();
    if k == 0 || k > n_points {
        return Err(Error::Parameter(format!(
            "k must lie in [1, {n_points}] for {n_points} points, got {k}"
        )));
    }
    if max_iters == 0 {
        return Err(Error::Parameter("max_iters must be at least 1".into()));
    }

    let mut rng = seed::rng(seed);
    let mut centroids = plus_plus_seeds(points, k, &mut rng);
    let mut assignments = vec![usize::MAX; n_points];
    let mut trace: Vec<T> = Vec::new();

    for _ in 0..max_iters {
        let changed = assign(points, &centroids, &mut assignments);
        repair_empty(points, &mut centroids, &mut assignments);
        update_centroids(points, &assignments, &mut centroids);
        let inertia = inertia(points, &centroids, &assignments);
        let done = match trace.last() {
            Some(&prev) => {
                !changed || prev <= T::zero() || (prev - inertia) / prev < T::of(rel_tol)
            }
            None => false,
        };
        trace.push(inertia);
        if done {
            break;
        }
    }

    Ok(KMeansResult {
        inertia: *trace.last().expect("at least one iteration"),
        iterations: trace.len(),
        centroids,
        assignments,
        trace,
    })
}

/// Best of `options.restarts` seedings, each seeded from `(seed, restart)`.
/// Ties keep the earliest restart.
pub fn kmeans_restarts<T: Scalar>(
    points: &Matrix<T>,
    k: usize,
    seed: u64,
    options: &KMeansOptions,
) -> Result<KMeansResult<T>> {
    let mut best: Option<KMeansResult<T>> = None;
    for r in 0..options.restarts.max(1) {
        let run = kmeans(
            points,
            k,
            seed::derive(seed, &[r as u64]),
            options.max_iters,
            options.rel_tol,
        )?;
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Index drawn with probability proportional to `weights`.
fn weighted_pick(weights: &[f64], total: f64, rng: &mut seed::Rng) -> usize {
    let target = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    for (i, &d) in weights.iter().enumerate() {
        acc += d;
        if d > 0.0 && acc > target {
            return i;
        }
    }
    // roundoff can leave target >= acc; fall back to the last candidate
    weights.iter().rposition(|&d| d > 0.0).unwrap_or(0)
}

/// Greedy k-means++: each new center is the best of `2 + ln k` candidates
/// drawn by squared-distance sampling, judged by the resulting potential.
fn plus_plus_seeds<T: Scalar>(points: &Matrix<T>, k: usize, rng: &mut seed::Rng) -> Matrix<T> {
    let n_points = points.rows();
    let trials = 2 + (k as f64).ln().floor() as usize;
    let mut centroids = Matrix::zeros(k, points.cols());
    let first = rng.gen_range(0..n_points);
    centroids.row_mut(0).copy_from_slice(points.row(first));

    let mut nearest: Vec<f64> = (0..n_points)
        .map(|i| sq_dist(points.row(i), centroids.row(0)).as_f64())
        .collect();
    for c in 1..k {
        let total: f64 = nearest.iter().sum();
        if total <= 0.0 {
            let pick = rng.gen_range(0..n_points);
            centroids.row_mut(c).copy_from_slice(points.row(pick));
            continue;
        }
        let mut best: Option<(f64, Vec<f64>, usize)> = None;
        for _ in 0..trials {
            let candidate = weighted_pick(&nearest, total, rng);
            let updated: Vec<f64> = nearest
                .iter()
                .enumerate()
                .map(|(i, &d)| d.min(sq_dist(points.row(i), points.row(candidate)).as_f64()))
                .collect();
            let potential: f64 = updated.iter().sum();
            if best.as_ref().is_none_or(|b| potential < b.0) {
                best = Some((potential, updated, candidate));
            }
        }
        let (_, updated, pick) = best.expect("at least one trial");
        centroids.row_mut(c).copy_from_slice(points.row(pick));
        nearest = updated;
    }
    centroids
}

/// Nearest-centroid assignment, ties to the lowest index. Returns whether any
/// assignment changed.
fn assign<T: Scalar>(points: &Matrix<T>, centroids: &Matrix<T>, assignments: &mut [usize]) -> bool {
    let mut changed = false;
    for (i, slot) in assignments.iter_mut().enumerate() {
        let p = points.row(i);
        let mut best = 0;
        let mut best_d = sq_dist(p, centroids.row(0));
        for c in 1..centroids.rows() {
            let d = sq_dist(p, centroids.row(c));
            if d < best_d {
                best = c;
                best_d = d;
            }
        }
        if *slot != best {
            *slot = best;
            changed = true;
        }
    }
    changed
}

/// Every empty cluster takes the point farthest from its own centroid among
/// clusters that can spare one.
fn repair_empty<T: Scalar>(
    points: &Matrix<T>,
    centroids: &mut Matrix<T>,
    assignments: &mut [usize],
) {
    let k = centroids.rows();
    let mut sizes = vec![0usize; k];
    for &a in assignments.iter() {
        sizes[a] += 1;
    }
    for empty in 0..k {
        if sizes[empty] > 0 {
            continue;
        }
        let mut far: Option<(usize, T)> = None;
        for (i, &a) in assignments.iter().enumerate() {
            if sizes[a] < 2 {
                continue;
            }
            let d = sq_dist(points.row(i), centroids.row(a));
            if far.is_none_or(|(_, fd)| d > fd) {
                far = Some((i, d));
            }
        }
        // k <= K guarantees a donor exists
        let (i, _) = far.expect("a cluster with at least two points");
        sizes[assignments[i]] -= 1;
        sizes[empty] = 1;
        assignments[i] = empty;
        centroids.row_mut(empty).copy_from_slice(points.row(i));
    }
}

/// Centroids become the means of their points, summed in point order.
fn update_centroids<T: Scalar>(
    points: &Matrix<T>,
    assignments: &[usize],
    centroids: &mut Matrix<T>,
) {
    let mut sums = Matrix::<T>::zeros(centroids.rows(), centroids.cols());
    let mut counts = vec![0usize; centroids.rows()];
    for (i, &a) in assignments.iter().enumerate() {
        counts[a] += 1;
        for (s, &v) in sums.row_mut(a).iter_mut().zip(points.row(i)) {
            *s = *s + v;
        }
    }
    for (c, &count) in counts.iter().enumerate() {
        if count == 0 {
            continue;
        }
        let n = T::of_usize(count);
        for (dst, &s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
            *dst = s / n;
        }
    }
}

pub fn inertia<T: Scalar>(points: &Matrix<T>, centroids: &Matrix<T>, assignments: &[usize]) -> T {
    assignments
        .iter()
        .enumerate()
        .map(|(i, &a)| sq_dist(points.row(i), centroids.row(a)))
        .sum()
}

/// Prototype order: larger clusters first, then smaller centroid L2 norm, then
/// smaller first coordinate, then the remaining coordinates
/// lexicographically. The last key makes the order total.
pub fn canonical_cmp<T: Scalar>(a: (&[T], usize), b: (&[T], usize)) -> Ordering {
    let norm = |v: &[T]| v.iter().map(|x| x.as_f64() * x.as_f64()).sum::<f64>();
    b.1.cmp(&a.1)
        .then_with(|| norm(a.0).total_cmp(&norm(b.0)))
        .then_with(|| {
            a.0.iter()
                .zip(b.0)
                .map(|(x, y)| x.as_f64().total_cmp(&y.as_f64()))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
}

/// Row permutation putting `centroids` into canonical order.
pub fn canonical_order<T: Scalar>(centroids: &Matrix<T>, sizes: &[usize]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..centroids.rows()).collect();
    order.sort_by(|&i, &j| {
        canonical_cmp((centroids.row(i), sizes[i]), (centroids.row(j), sizes[j]))
    });
    order
}
