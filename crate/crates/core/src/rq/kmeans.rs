//! Lloyd k-means with k-means++ seeding over row-major `f64` data.
//!
//! The assignment step runs in parallel; centroid sums are accumulated
//! sequentially in point order, so results do not depend on the number of
//! worker threads.

use std::collections::HashSet;

use rand::Rng;
use rayon::prelude::*;

/// Squared Euclidean distance, accumulated left to right.
#[inline]
pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid and its squared distance; ties go to the
/// smallest index.
#[inline]
pub(crate) fn nearest(point: &[f64], centroids: &[f64], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centroids.chunks_exact(dim).enumerate() {
        let d = squared_distance(point, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

pub(crate) fn assign(data: &[f64], centroids: &[f64], dim: usize) -> Vec<(usize, f64)> {
    data.par_chunks_exact(dim)
        .map(|p| nearest(p, centroids, dim))
        .collect()
}

/// Number of distinct rows, counting no further than `cap`.
pub(crate) fn distinct_rows(data: &[f64], dim: usize, cap: usize) -> usize {
    let mut seen: HashSet<Vec<u64>> = HashSet::new();
    for row in data.chunks_exact(dim) {
        seen.insert(row.iter().map(|v| v.to_bits()).collect());
        if seen.len() >= cap {
            break;
        }
    }
    seen.len()
}

pub(crate) struct KMeansFit {
    pub centroids: Vec<f64>,
    /// Mean squared quantization error after each assignment step.
    pub mse_trace: Vec<f64>,
    pub iterations: usize,
}

/// k-means++: first centre uniform, the rest drawn proportional to the
/// squared distance to the nearest chosen centre.
pub(crate) fn kmeans_plus_plus<R: Rng>(data: &[f64], dim: usize, k: usize, rng: &mut R) -> Vec<f64> {
    let n = data.len() / dim;
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(&data[first * dim..(first + 1) * dim]);
    let mut min_d2: Vec<f64> = data
        .par_chunks_exact(dim)
        .map(|p| squared_distance(p, &centroids[..dim]))
        .collect();
    while centroids.len() < k * dim {
        let total: f64 = min_d2.iter().sum();
        let chosen = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in min_d2.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                acc += w;
                pick = Some(i);
                if acc > target {
                    break;
                }
            }
            pick.expect("positive total implies a positive weight")
        } else {
            // All points coincide with a centre; callers shrink k to avoid this.
            rng.random_range(0..n)
        };
        let start = centroids.len();
        centroids.extend_from_slice(&data[chosen * dim..(chosen + 1) * dim]);
        let newest = &centroids[start..start + dim];
        min_d2
            .par_iter_mut()
            .zip(data.par_chunks_exact(dim))
            .for_each(|(d2, p)| {
                let d = squared_distance(p, newest);
                if d < *d2 {
                    *d2 = d;
                }
            });
    }
    centroids
}

pub(crate) fn lloyd(
    data: &[f64],
    dim: usize,
    mut centroids: Vec<f64>,
    max_iters: usize,
    rel_tol: f64,
) -> KMeansFit {
    let n = data.len() / dim;
    let k = centroids.len() / dim;
    let mut mse_trace = Vec::new();
    let mut iterations = 0;
    for _ in 0..max_iters.max(1) {
        let assignment = assign(data, &centroids, dim);
        let mse = assignment.iter().map(|&(_, d)| d).sum::<f64>() / n as f64;
        iterations += 1;
        let converged = match mse_trace.last() {
            Some(&prev) => mse == 0.0 || (prev - mse) <= rel_tol * prev,
            None => mse == 0.0,
        };
        mse_trace.push(mse);
        if converged || iterations >= max_iters {
            break;
        }

        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (p, &(c, _)) in data.chunks_exact(dim).zip(&assignment) {
            counts[c] += 1;
            for (s, v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut spread: Vec<f64> = assignment.iter().map(|&(_, d)| d).collect();
        for c in 0..k {
            let target = &mut centroids[c * dim..(c + 1) * dim];
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                for (t, s) in target.iter_mut().zip(&sums[c * dim..(c + 1) * dim]) {
                    *t = s * inv;
                }
            } else {
                // Re-seed an empty cluster with the worst-served point.
                let mut far = 0;
                for (i, &d) in spread.iter().enumerate() {
                    if d > spread[far] {
                        far = i;
                    }
                }
                target.copy_from_slice(&data[far * dim..(far + 1) * dim]);
                spread[far] = 0.0;
            }
        }
    }
    KMeansFit {
        centroids,
        mse_trace,
        iterations,
    }
}
