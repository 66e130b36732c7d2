//! Lloyd's k-means with k-means++ seeding.
//!
//! Used both to initialize the per-phoneme mixtures and, on its own, to find
//! allophonic subclusters.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::squared_euclidean;

pub const DEFAULT_MAX_ITER: usize = 300;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    /// C×F cluster centers.
    pub centroids: Array2<f64>,
    /// Nearest-centroid index per input row.
    pub assignments: Vec<usize>,
    /// Sum of squared distances to the assigned centroids.
    pub inertia: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// k-means with the default iteration cap.
pub fn kmeans_init(x: ArrayView2<'_, f64>, n_clusters: usize, seed: u64) -> Result<KMeans> {
    kmeans(x, n_clusters, seed, DEFAULT_MAX_ITER)
}

pub fn kmeans(
    x: ArrayView2<'_, f64>,
    n_clusters: usize,
    seed: u64,
    max_iter: usize,
) -> Result<KMeans> {
    let n = x.nrows();
    if n_clusters == 0 {
        return Err(Error::InvalidConfig("k-means needs at least one cluster".into()));
    }
    if n < n_clusters {
        return Err(Error::TooFewSamples {
            needed: n_clusters,
            got: n,
        });
    }
    if let Some((row, col)) = first_non_finite(x) {
        return Err(Error::NonFiniteValue { row, col });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_seeds(x, n_clusters, &mut rng);
    let mut assignments = vec![usize::MAX; n];
    let mut dists = vec![0.0; n];
    let mut iterations = 0;
    let mut converged = false;

    while iterations < max_iter.max(1) {
        iterations += 1;
        let mut changed = false;
        for (i, row) in x.outer_iter().enumerate() {
            let (best, d) = nearest(row, centroids.view());
            if best != assignments[i] {
                changed = true;
                assignments[i] = best;
            }
            dists[i] = d;
        }
        let reseeded = fill_empty_clusters(x, &mut centroids, &mut assignments, &mut dists);
        update_centroids(x, &assignments, &mut centroids);
        if !changed && !reseeded {
            converged = true;
            break;
        }
    }

    let inertia = x
        .outer_iter()
        .zip(&assignments)
        .map(|(row, &c)| squared_euclidean(row, centroids.row(c)))
        .sum();
    Ok(KMeans {
        centroids,
        assignments,
        inertia,
        iterations,
        converged,
    })
}

fn first_non_finite(x: ArrayView2<'_, f64>) -> Option<(usize, usize)> {
    x.outer_iter().enumerate().find_map(|(i, row)| {
        row.iter().position(|v| !v.is_finite()).map(|j| (i, j))
    })
}

/// Nearest centroid; ties go to the lowest index.
fn nearest(row: ArrayView1<'_, f64>, centroids: ArrayView2<'_, f64>) -> (usize, f64) {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, centroid) in centroids.outer_iter().enumerate() {
        let d = squared_euclidean(row, centroid);
        if d < best_d {
            best = c;
            best_d = d;
        }
    }
    (best, best_d)
}

fn plus_plus_seeds(x: ArrayView2<'_, f64>, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = x.nrows();
    let mut chosen = Vec::with_capacity(k);
    chosen.push(rng.gen_range(0..n));
    let mut d2: Vec<f64> = x
        .outer_iter()
        .map(|r| squared_euclidean(r, x.row(chosen[0])))
        .collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if acc > target && d > 0.0 {
                    pick = i;
                    break;
                }
            }
            // guard against rounding landing on an already chosen point
            if d2[pick] == 0.0 {
                pick = d2.iter().rposition(|&d| d > 0.0).unwrap_or(pick);
            }
            pick
        } else {
            // every remaining point duplicates a chosen one
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.gen_range(0..free.len())]
        };
        chosen.push(next);
        for (i, row) in x.outer_iter().enumerate() {
            let d = squared_euclidean(row, x.row(next));
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    x.select(Axis(0), &chosen)
}

/// Moves the point farthest from its centroid into each empty cluster.
/// Returns whether anything was moved.
fn fill_empty_clusters(
    x: ArrayView2<'_, f64>,
    centroids: &mut Array2<f64>,
    assignments: &mut [usize],
    dists: &mut [f64],
) -> bool {
    let k = centroids.nrows();
    let mut counts = vec![0usize; k];
    for &a in assignments.iter() {
        counts[a] += 1;
    }
    let mut moved = false;
    for c in 0..k {
        if counts[c] > 0 {
            continue;
        }
        let mut far = None;
        let mut far_d = f64::NEG_INFINITY;
        for (i, &a) in assignments.iter().enumerate() {
            if counts[a] > 1 && dists[i] > far_d {
                far = Some(i);
                far_d = dists[i];
            }
        }
        // n >= k guarantees a donor cluster with more than one member
        let p = far.expect("a donor cluster exists");
        counts[assignments[p]] -= 1;
        counts[c] = 1;
        assignments[p] = c;
        dists[p] = 0.0;
        centroids.row_mut(c).assign(&x.row(p));
        moved = true;
    }
    moved
}

fn update_centroids(x: ArrayView2<'_, f64>, assignments: &[usize], centroids: &mut Array2<f64>) {
    let k = centroids.nrows();
    let mut sums = Array2::<f64>::zeros(centroids.raw_dim());
    let mut counts = vec![0usize; k];
    for (row, &a) in x.outer_iter().zip(assignments) {
        let mut s = sums.row_mut(a);
        s += &row;
        counts[a] += 1;
    }
    for (c, &count) in counts.iter().enumerate().take(k) {
        if count > 0 {
            let mean = &sums.row(c) / count as f64;
            centroids.row_mut(c).assign(&mean);
        }
    }
}
